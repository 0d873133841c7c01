"""Layer objects composing the functional kernels into networks.

Every layer exposes forward(x, train), backward(dout), params() (the
trainable Param objects) and variables() (all persistent arrays,
including batch-norm running statistics, in a fixed order used by the
checkpoint format). Layers cache whatever the backward pass needs, so
forward must precede backward within a step.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F


class Param:
    """A trainable tensor and the gradient from the latest backward pass."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def variables(self) -> list[np.ndarray]:
        return [p.value for p in self.params()]


class Conv1D(Layer):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        padding: str = "same",
        bias: bool = True,
    ):
        if kernel < 1:
            raise ValueError(f"kernel size must be >= 1, got {kernel}")
        self.padding = padding
        self.w = Param(kaiming_uniform((kernel, c_in, c_out), kernel * c_in, rng))
        self.b = Param(np.zeros(c_out)) if bias else None
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._x = x
        return F.conv1d(x, self.w.value, self.b.value if self.b else None, self.padding)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = F.conv1d_backward(self._x, self.w.value, dout, self.padding)
        self.w.grad = dw
        if self.b is not None:
            self.b.grad = db
        return dx

    def params(self) -> list[Param]:
        return [self.w, self.b] if self.b is not None else [self.w]


class Conv2D(Layer):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: tuple[int, int],
        rng: np.random.Generator,
        padding: str = "same",
        bias: bool = True,
    ):
        kh, kw = kernel
        if kh < 1 or kw < 1:
            raise ValueError(f"kernel sides must be >= 1, got {kernel}")
        self.padding = padding
        self.w = Param(kaiming_uniform((kh, kw, c_in, c_out), kh * kw * c_in, rng))
        self.b = Param(np.zeros(c_out)) if bias else None
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._x = x
        return F.conv2d(x, self.w.value, self.b.value if self.b else None, self.padding)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = F.conv2d_backward(self._x, self.w.value, dout, self.padding)
        self.w.grad = dw
        if self.b is not None:
            self.b.grad = db
        return dx

    def params(self) -> list[Param]:
        return [self.w, self.b] if self.b is not None else [self.w]


class Dense(Layer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Param(kaiming_uniform((d_in, d_out), d_in, rng))
        self.b = Param(np.zeros(d_out))
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[-1] != self.w.value.shape[0]:
            raise ValueError(
                f"dense layer expects {self.w.value.shape[0]} features, got {x.shape[-1]}"
            )
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.w.grad = self._x.T @ dout
        self.b.grad = dout.sum(axis=0)
        return dout @ self.w.value.T

    def params(self) -> list[Param]:
        return [self.w, self.b]


class ReLU(Layer):
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._mask


class BatchNorm(Layer):
    """Normalizes the last axis over all other axes (batch and space).

    Training uses the biased batch variance and needs at least two
    reduced elements; evaluation uses running statistics updated as
    running = momentum * running + (1 - momentum) * batch.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels))
        self.beta = Param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        axes = tuple(range(x.ndim - 1))
        if train:
            m = x.size // x.shape[-1]
            if m < 2:
                raise ValueError("batch norm needs at least 2 elements per feature in training")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)  # biased
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        self._cache = (x_hat, inv_std, axes, train)
        return self.gamma.value * x_hat + self.beta.value

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_hat, inv_std, axes, train = self._cache
        self.gamma.grad = (dout * x_hat).sum(axis=axes)
        self.beta.grad = dout.sum(axis=axes)
        if not train:
            return dout * self.gamma.value * inv_std
        dmean = dout.mean(axis=axes)
        dproj = (dout * x_hat).mean(axis=axes)
        return self.gamma.value * inv_std * (dout - dmean - x_hat * dproj)

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def variables(self) -> list[np.ndarray]:
        return [self.gamma.value, self.beta.value, self.running_mean, self.running_var]


class Dropout(Layer):
    """Inverted dropout: active only in training, identity when p == 0."""

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        if p > 0 and rng is None:
            raise ValueError("dropout with p > 0 needs a random generator")
        self.p = p
        self.rng = rng
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if not train or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dout
        return dout * self._mask


class MaxPool1D(Layer):
    def __init__(self, pool: int, stride: int):
        self.pool = pool
        self.stride = stride
        self._argmax: np.ndarray | None = None
        self._length: int | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._length = x.shape[1]
        out, self._argmax = F.max_pool1d(x, self.pool, self.stride)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return F.max_pool1d_backward(dout, self._argmax, self._length)


class GlobalMaxPool(Layer):
    def __init__(self):
        self._argmax: np.ndarray | None = None
        self._length: int | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._length = x.shape[1]
        out, self._argmax = F.global_max_pool(x)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return F.global_max_pool_backward(dout, self._argmax, self._length)


class Flatten(Layer):
    def __init__(self):
        self._shape: tuple[int, ...] | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._shape)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def variables(self) -> list[np.ndarray]:
        return [v for layer in self.layers for v in layer.variables()]


def dropout_layers(layer: Layer) -> list["Dropout"]:
    """All Dropout layers nested anywhere inside a network."""
    found: list[Dropout] = []
    if isinstance(layer, Dropout):
        found.append(layer)
    elif isinstance(layer, Sequential):
        for inner in layer.layers:
            found.extend(dropout_layers(inner))
    elif isinstance(layer, MultiBranchNet):
        for branch in layer.branches:
            found.extend(dropout_layers(branch))
        found.extend(dropout_layers(layer.head))
    return found


class MultiBranchNet(Layer):
    """One branch per input channel, concatenated and fed to a head.

    Input (N, L, B) is split into B single-channel sequences; each branch
    must end in a layer producing (N, features). The concatenated feature
    vector goes through the head.
    """

    def __init__(self, branches: list[Sequential], head: Sequential):
        if not branches:
            raise ValueError("need at least one branch")
        self.branches = list(branches)
        self.head = head
        self._widths: list[int] | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[-1] != len(self.branches):
            raise ValueError(
                f"input has {x.shape[-1]} channels, network has {len(self.branches)} branches"
            )
        feats = [
            branch.forward(x[:, :, i : i + 1], train)
            for i, branch in enumerate(self.branches)
        ]
        self._widths = [f.shape[1] for f in feats]
        return self.head.forward(np.concatenate(feats, axis=1), train)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dcat = self.head.backward(dout)
        pieces = np.split(dcat, np.cumsum(self._widths)[:-1], axis=1)
        dxs = [branch.backward(piece) for branch, piece in zip(self.branches, pieces)]
        return np.concatenate(dxs, axis=2)

    def params(self) -> list[Param]:
        out = [p for branch in self.branches for p in branch.params()]
        return out + self.head.params()

    def variables(self) -> list[np.ndarray]:
        out = [v for branch in self.branches for v in branch.variables()]
        return out + self.head.variables()
