"""Convolution and pooling kernels with explicit backward passes.

Layout conventions: 1-D tensors are (batch, length, channels), 2-D
tensors are (batch, height, width, channels). Convolutions are stride 1;
"same" padding puts (K - 1) // 2 zeros on the left/top so output length
equals input length. The unbatched forms (length, channels) and
(height, width, channels) are accepted and returned without the batch
axis.

Forward passes gather kernel-offset slices into a column tensor and
contract it against the weights with one matmul (im2col); backward
scatters the column gradient back with the mirrored loop. Max pooling
uses ceil((L - pool) / stride) + 1 windows, the final window clipped to
the sequence end; argmax ties go to the first index.
"""

from __future__ import annotations

import numpy as np


def _same_pad(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def _pad_amounts(k: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        return _same_pad(k)
    if padding == "valid":
        return 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _with_batch(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x, False
    if x.ndim == rank - 1:
        return x[None], True
    raise ValueError(f"expected a rank-{rank - 1} or rank-{rank} tensor, got shape {x.shape}")


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, padding: str = "same") -> np.ndarray:
    """x (N, L, C_in), w (K, C_in, C_out), b (C_out,) -> (N, L_out, C_out)."""
    x, squeeze = _with_batch(np.asarray(x, dtype=np.float64), 3)
    k, c_in, c_out = w.shape
    if x.shape[2] != c_in:
        raise ValueError(f"input has {x.shape[2]} channels, kernel expects {c_in}")
    left, right = _pad_amounts(k, padding)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    l_out = xp.shape[1] - k + 1
    if l_out < 1:
        raise ValueError(f"kernel size {k} exceeds padded length {xp.shape[1]}")
    cols = np.stack([xp[:, i : i + l_out, :] for i in range(k)], axis=2)  # (N, L_out, K, C_in)
    out = np.tensordot(cols, w, axes=([2, 3], [0, 1]))
    if b is not None:
        out = out + b
    return out[0] if squeeze else out


def conv1d_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray, padding: str = "same"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of conv1d for upstream gradient dout."""
    x, squeeze = _with_batch(np.asarray(x, dtype=np.float64), 3)
    dout, _ = _with_batch(np.asarray(dout, dtype=np.float64), 3)
    k, c_in, _ = w.shape
    left, right = _pad_amounts(k, padding)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    l_out = dout.shape[1]

    cols = np.stack([xp[:, i : i + l_out, :] for i in range(k)], axis=2)
    dw = np.tensordot(cols, dout, axes=([0, 1], [0, 1]))  # (K, C_in, C_out)
    db = dout.sum(axis=(0, 1))
    dcols = np.tensordot(dout, w, axes=([2], [2]))  # (N, L_out, K, C_in)
    dxp = np.zeros_like(xp)
    for i in range(k):
        dxp[:, i : i + l_out, :] += dcols[:, :, i, :]
    dx = dxp[:, left : left + x.shape[1], :]
    return (dx[0] if squeeze else dx), dw, db


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, padding: str = "same") -> np.ndarray:
    """x (N, H, W, C_in), w (KH, KW, C_in, C_out) -> (N, H_out, W_out, C_out)."""
    x, squeeze = _with_batch(np.asarray(x, dtype=np.float64), 4)
    kh, kw, c_in, c_out = w.shape
    if x.shape[3] != c_in:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {c_in}")
    top, bottom = _pad_amounts(kh, padding)
    lft, rgt = _pad_amounts(kw, padding)
    xp = np.pad(x, ((0, 0), (top, bottom), (lft, rgt), (0, 0)))
    h_out = xp.shape[1] - kh + 1
    w_out = xp.shape[2] - kw + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(f"kernel {kh}x{kw} exceeds padded input {xp.shape[1]}x{xp.shape[2]}")
    cols = np.empty((x.shape[0], h_out, w_out, kh, kw, c_in))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + h_out, j : j + w_out, :]
    out = np.tensordot(cols, w, axes=([3, 4, 5], [0, 1, 2]))
    if b is not None:
        out = out + b
    return out[0] if squeeze else out


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray, padding: str = "same"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of conv2d for upstream gradient dout."""
    x, squeeze = _with_batch(np.asarray(x, dtype=np.float64), 4)
    dout, _ = _with_batch(np.asarray(dout, dtype=np.float64), 4)
    kh, kw, c_in, _ = w.shape
    top, bottom = _pad_amounts(kh, padding)
    lft, rgt = _pad_amounts(kw, padding)
    xp = np.pad(x, ((0, 0), (top, bottom), (lft, rgt), (0, 0)))
    h_out, w_out = dout.shape[1], dout.shape[2]

    cols = np.empty((x.shape[0], h_out, w_out, kh, kw, c_in))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + h_out, j : j + w_out, :]
    dw = np.tensordot(cols, dout, axes=([0, 1, 2], [0, 1, 2]))
    db = dout.sum(axis=(0, 1, 2))
    dcols = np.tensordot(dout, w, axes=([3], [3]))  # (N, H_out, W_out, KH, KW, C_in)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + h_out, j : j + w_out, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, top : top + x.shape[1], lft : lft + x.shape[2], :]
    return (dx[0] if squeeze else dx), dw, db


def pool1d_output_length(length: int, pool: int, stride: int) -> int:
    """Window count for max pooling; a short final window still counts.

    Every window must start inside the sequence, so when stride exceeds
    pool the count is capped at ceil(length / stride) and the tail past
    the last start is dropped.
    """
    if length < 1 or pool < 1 or stride < 1:
        raise ValueError("length, pool and stride must all be >= 1")
    pool = min(pool, length)
    return min(-((length - pool) // -stride) + 1, -(length // -stride))


def max_pool1d(x: np.ndarray, pool: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """x (N, L, C) -> (out (N, L_out, C), argmax (N, L_out, C)).

    The final window is clipped to the sequence end when stride does not
    divide evenly; a pool longer than the sequence degrades to one window
    over the whole sequence. argmax holds absolute input indices.
    """
    x, squeeze = _with_batch(np.asarray(x, dtype=np.float64), 3)
    n, length, c = x.shape
    l_out = pool1d_output_length(length, pool, stride)
    out = np.empty((n, l_out, c))
    argmax = np.empty((n, l_out, c), dtype=np.int64)
    for o in range(l_out):
        lo = o * stride
        hi = min(lo + pool, length)
        window = x[:, lo:hi, :]
        idx = window.argmax(axis=1)  # first occurrence on ties
        out[:, o, :] = np.take_along_axis(window, idx[:, None, :], axis=1)[:, 0, :]
        argmax[:, o, :] = idx + lo
    if squeeze:
        return out[0], argmax[0]
    return out, argmax


def max_pool1d_backward(dout: np.ndarray, argmax: np.ndarray, length: int) -> np.ndarray:
    """Scatter dout back to the argmax positions of the forward pass."""
    dout, squeeze = _with_batch(np.asarray(dout, dtype=np.float64), 3)
    argmax, _ = _with_batch(np.asarray(argmax), 3)
    n, l_out, c = dout.shape
    dx = np.zeros((n, length, c))
    n_idx = np.arange(n)[:, None, None]
    c_idx = np.arange(c)[None, None, :]
    np.add.at(dx, (n_idx, argmax, c_idx), dout)
    return dx[0] if squeeze else dx


def global_max_pool(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """x (N, L, C) -> (max over L (N, C), argmax (N, C))."""
    x, squeeze = _with_batch(np.asarray(x, dtype=np.float64), 3)
    argmax = x.argmax(axis=1)
    out = np.take_along_axis(x, argmax[:, None, :], axis=1)[:, 0, :]
    if squeeze:
        return out[0], argmax[0]
    return out, argmax


def global_max_pool_backward(dout: np.ndarray, argmax: np.ndarray, length: int) -> np.ndarray:
    dout = np.asarray(dout, dtype=np.float64)
    squeeze = dout.ndim == 1
    if squeeze:
        dout = dout[None]
        argmax = argmax[None]
    n, c = dout.shape
    dx = np.zeros((n, length, c))
    n_idx = np.arange(n)[:, None]
    c_idx = np.arange(c)[None, :]
    np.add.at(dx, (n_idx, argmax, c_idx), dout)
    return dx[0] if squeeze else dx
