"""Windowed dataset construction for the speed regressors.

A window is the n samples strictly before a prediction step: the model
sees rows (relative time, wheel speed, GPS speed) for those n samples and
regresses the true speed at the step that follows them. A run of length L
therefore yields L - n windows, and a corpus of R runs totalling S samples
yields S - R*n.

Speeds are normalized by the corpus peak so channels land in [0, 1]; the
time column is rescaled within each window to [0, 1] so windows carry no
absolute-position information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream
from .signals import TrainRun

WINDOW_CACHE_VERSION = 1


class DatasetError(ValueError):
    """Invalid windowing or split request."""


@dataclass(frozen=True)
class NormalizationConfig:
    peak_speed: float

    def __post_init__(self) -> None:
        if not (self.peak_speed > 0 and math.isfinite(self.peak_speed)):
            raise DatasetError(f"peak_speed must be finite and > 0, got {self.peak_speed}")

    @classmethod
    def from_runs(cls, runs: list[TrainRun]) -> "NormalizationConfig":
        peak = 0.0
        for run in runs:
            for s in run.samples:
                peak = max(peak, s.wheel_speed, s.gps_speed)
                if s.train_speed is not None:
                    peak = max(peak, s.train_speed)
        return cls(peak_speed=peak)


@dataclass(frozen=True)
class WindowSample:
    """Inputs (n, 3) as columns (time, wheel, gps), all in [0, 1] scale."""

    run_id: str
    index: int  # index of the prediction step within its run
    t: float  # timestamp of the prediction step
    inputs: np.ndarray
    target: float  # normalized true speed at the prediction step


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[WindowSample, ...]
    val: tuple[WindowSample, ...]


def count_windows(total_samples: int, n_runs: int, n: int) -> int:
    """Window count for a corpus: each run loses its first n samples."""
    return total_samples - n_runs * n


def window_inputs(run: TrainRun, n: int, norm: NormalizationConfig) -> tuple[np.ndarray, np.ndarray]:
    """All window input tensors for a run, truth not required.

    Returns (inputs, times): inputs has shape (L - n, n, 3), times the
    prediction-step timestamps, ascending.
    """
    if n < 1:
        raise DatasetError(f"window length must be >= 1, got {n}")
    if len(run) <= n:
        raise DatasetError(
            f"run {run.run_id!r} has {len(run)} samples, too short for windows of {n}"
        )
    t = run.times()
    wheel = np.array([s.wheel_speed for s in run.samples]) / norm.peak_speed
    gps = np.array([s.gps_speed for s in run.samples]) / norm.peak_speed

    count = len(run) - n
    inputs = np.empty((count, n, 3), dtype=np.float64)
    for k in range(count):
        lo, hi = k, k + n
        t_win = t[lo:hi]
        span = t_win[-1] - t_win[0]
        t_rel = (t_win - t_win[0]) / span if span > 0 else np.zeros(n)
        inputs[k, :, 0] = t_rel
        inputs[k, :, 1] = wheel[lo:hi]
        inputs[k, :, 2] = gps[lo:hi]
    times = t[n:]
    return inputs, times


def make_windows(runs: list[TrainRun], n: int, norm: NormalizationConfig) -> list[WindowSample]:
    """Supervised windows for runs with ground truth, in run/time order."""
    windows: list[WindowSample] = []
    for run in runs:
        if not run.has_ground_truth:
            raise DatasetError(f"run {run.run_id!r} has no ground truth to regress")
        inputs, times = window_inputs(run, n, norm)
        for k in range(inputs.shape[0]):
            step = k + n
            windows.append(
                WindowSample(
                    run_id=run.run_id,
                    index=step,
                    t=float(times[k]),
                    inputs=inputs[k],
                    target=run.samples[step].train_speed / norm.peak_speed,
                )
            )
    return windows


def split(windows: list[WindowSample], ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Seeded shuffled train/validation split; len(train) = floor(ratio * N)."""
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must be in (0, 1), got {ratio}")
    if not windows:
        raise DatasetError("cannot split an empty window list")
    rng = stream(seed, "split")
    order = rng.permutation(len(windows))
    n_train = int(math.floor(ratio * len(windows)))
    train = tuple(windows[i] for i in order[:n_train])
    val = tuple(windows[i] for i in order[n_train:])
    return DatasetSplit(train=train, val=val)


def as_arrays(windows: tuple[WindowSample, ...] | list[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (X, y) with X (N, n, 3) and y (N,)."""
    if not windows:
        raise DatasetError("no windows to stack")
    x = np.stack([w.inputs for w in windows]).astype(np.float64)
    y = np.array([w.target for w in windows], dtype=np.float64)
    return x, y


def save_windows(windows: list[WindowSample], path: str | Path) -> None:
    """Binary window cache; round-trips arrays bit-exactly."""
    x, y = as_arrays(windows)
    np.savez(
        Path(path),
        version=np.array(WINDOW_CACHE_VERSION),
        run_ids=np.array([w.run_id for w in windows]),
        indices=np.array([w.index for w in windows], dtype=np.int64),
        times=np.array([w.t for w in windows], dtype=np.float64),
        inputs=x,
        targets=y,
    )


def load_windows(path: str | Path) -> list[WindowSample]:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["version"])
        if version != WINDOW_CACHE_VERSION:
            raise DatasetError(f"unsupported window cache version {version}")
        run_ids = data["run_ids"]
        indices = data["indices"]
        times = data["times"]
        inputs = data["inputs"]
        targets = data["targets"]
    return [
        WindowSample(
            run_id=str(run_ids[i]),
            index=int(indices[i]),
            t=float(times[i]),
            inputs=inputs[i],
            target=float(targets[i]),
        )
        for i in range(len(run_ids))
    ]
