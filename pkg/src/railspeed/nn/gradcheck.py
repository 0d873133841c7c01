"""Finite-difference verification of the analytic gradients.

Central differences (f(w + h) - f(w - h)) / 2h against the backward-pass
gradient of the squared-error loss, in training mode (so batch norm uses
batch statistics) but with dropout forced off, because a resampled mask
between the two probe evaluations would change the function itself.

The networks contain ReLU and max-pool kinks. When a probe interval
straddles one, the central difference measures the average of two
slopes, not the local gradient, and the comparison fails spuriously.
Probes that disagree are therefore re-taken at smaller step sizes: a
genuinely wrong gradient keeps its error at every step size, while a
kink artifact vanishes as soon as the kink falls outside the interval.
"""

from __future__ import annotations

import numpy as np

from .layers import Layer, dropout_layers
from .losses import mse_loss

RETRY_THRESHOLD = 1e-6
RETRY_SHRINKS = (16.0, 256.0)


def gradient_check(
    net: Layer,
    x: np.ndarray,
    y: np.ndarray,
    h: float = 1e-5,
    max_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between analytic and numeric gradients.

    With max_per_tensor set, only that many randomly chosen entries per
    parameter tensor are probed (rng required), which keeps the check
    tractable on full-size networks. Relative error is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    if max_per_tensor is not None and rng is None:
        raise ValueError("sampled gradient check needs a random generator")

    dropouts = dropout_layers(net)
    saved_p = [d.p for d in dropouts]
    for d in dropouts:
        d.p = 0.0
    try:
        pred = net.forward(x, train=True)
        if pred.shape != y.shape:
            raise ValueError(f"target shape {y.shape} must match prediction shape {pred.shape}")
        _, dpred = mse_loss(pred, y)
        net.backward(dpred)

        def loss_at(flat: np.ndarray, idx: int, delta: float) -> float:
            original = flat[idx]
            flat[idx] = original + delta
            value, _ = mse_loss(net.forward(x, train=True), y)
            flat[idx] = original
            return value

        def probe(flat: np.ndarray, idx: int, analytic: float, step: float) -> float:
            numeric = (loss_at(flat, idx, step) - loss_at(flat, idx, -step)) / (2.0 * step)
            return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)

        worst = 0.0
        for p in net.params():
            flat = p.value.reshape(-1)
            grad = p.grad.reshape(-1)
            size = flat.size
            if max_per_tensor is None or size <= max_per_tensor:
                indices = np.arange(size)
            else:
                indices = rng.choice(size, size=max_per_tensor, replace=False)
            for idx in indices:
                rel = probe(flat, idx, grad[idx], h)
                for shrink in RETRY_SHRINKS:
                    if rel <= RETRY_THRESHOLD:
                        break
                    rel = min(rel, probe(flat, idx, grad[idx], h / shrink))
                worst = max(worst, rel)
        return worst
    finally:
        for d, p in zip(dropouts, saved_p):
            d.p = p
