"""Training loss."""

from __future__ import annotations

import numpy as np


class NumericsError(RuntimeError):
    """A NaN or infinity appeared where a finite number was required."""


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred.

    loss = mean((pred - target)^2), dpred = 2 (pred - target) / N with N
    the total element count.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NumericsError(f"loss is {loss}; training has diverged or inputs are bad")
    return loss, 2.0 * diff / diff.size
