"""Core time-series types and CSV ingestion/export.

The canonical interchange format is CSV with header
``run_id,t,wheel_speed,gps_speed,train_speed`` (UTF-8, '.' decimals, LF
line endings). The ground-truth column may be empty for unlabeled data;
a missing value is represented as ``None``, never 0.0.

Run metadata that the CSV schema cannot carry (test/train role, WSP flag)
is encoded in the run_id by convention: ids starting with ``test`` are
test runs, and ids containing a ``wsp`` token (split on ``-``) flag WSP
operation. The simulator emits ids following this convention.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

NOMINAL_DT = 1.0
_HEADER = ["run_id", "t", "wheel_speed", "gps_speed", "train_speed"]


class RunFormatError(ValueError):
    """Malformed or invariant-violating run data; message names the line."""


@dataclass(frozen=True)
class SensorSample:
    """One timestep of sensor channels, speeds in m/s.

    train_speed is the ground truth and is None for inference-only data.
    """

    t: float
    wheel_speed: float
    gps_speed: float
    train_speed: float | None = None

    def __post_init__(self) -> None:
        if self.t < 0 or not math.isfinite(self.t):
            raise RunFormatError(f"timestamp must be finite and >= 0, got {self.t}")
        for name in ("wheel_speed", "gps_speed", "train_speed"):
            v = getattr(self, name)
            if v is None:
                continue
            if not math.isfinite(v) or v < 0:
                raise RunFormatError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class TrainRun:
    """One scenario's time-ordered samples plus role metadata."""

    run_id: str
    samples: tuple[SensorSample, ...]
    has_wsp: bool = False
    role: str = "train"

    def __post_init__(self) -> None:
        if not self.run_id:
            raise RunFormatError("run_id must be non-empty")
        if not self.samples:
            raise RunFormatError(f"run {self.run_id!r} has no samples")
        if self.role not in ("train", "validation", "test"):
            raise RunFormatError(f"run {self.run_id!r} has invalid role {self.role!r}")
        object.__setattr__(self, "samples", tuple(self.samples))
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.t <= prev.t:
                raise RunFormatError(
                    f"run {self.run_id!r}: time not strictly increasing "
                    f"({prev.t} -> {cur.t})"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def has_ground_truth(self) -> bool:
        return all(s.train_speed is not None for s in self.samples)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])


def role_from_run_id(run_id: str) -> str:
    return "test" if run_id.startswith("test") else "train"


def wsp_from_run_id(run_id: str) -> bool:
    return "wsp" in run_id.split("-")


def _parse_float(text: str, column: str, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise RunFormatError(
            f"line {lineno}: cannot parse {column}={text!r} as a number"
        ) from None


def load_runs(path: str | Path) -> list[TrainRun]:
    """Load TrainRuns from the signals CSV format.

    Rows are grouped by run_id in encounter order; within a run, t must be
    strictly increasing. Errors name the offending line number.
    """
    path = Path(path)
    grouped: dict[str, list[SensorSample]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RunFormatError(f"{path}: empty file, expected header row") from None
        if header != _HEADER:
            raise RunFormatError(
                f"{path}: line 1: bad header {header!r}, expected {_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_HEADER):
                raise RunFormatError(
                    f"line {lineno}: expected {len(_HEADER)} fields, got {len(row)}"
                )
            run_id, t_s, wheel_s, gps_s, truth_s = row
            if not run_id:
                raise RunFormatError(f"line {lineno}: empty run_id")
            t = _parse_float(t_s, "t", lineno)
            try:
                sample = SensorSample(
                    t=t,
                    wheel_speed=_parse_float(wheel_s, "wheel_speed", lineno),
                    gps_speed=_parse_float(gps_s, "gps_speed", lineno),
                    train_speed=(
                        None if truth_s == "" else _parse_float(truth_s, "train_speed", lineno)
                    ),
                )
            except RunFormatError as err:
                raise RunFormatError(f"line {lineno}: {err}") from None
            bucket = grouped.setdefault(run_id, [])
            if bucket and sample.t <= bucket[-1].t:
                raise RunFormatError(
                    f"line {lineno}: run {run_id!r} time not strictly increasing "
                    f"({bucket[-1].t} -> {sample.t})"
                )
            bucket.append(sample)
    runs = []
    for run_id, samples in grouped.items():
        runs.append(
            TrainRun(
                run_id=run_id,
                samples=tuple(samples),
                has_wsp=wsp_from_run_id(run_id),
                role=role_from_run_id(run_id),
            )
        )
    return runs


def _format_float(value: float) -> str:
    # repr round-trips float64 exactly, which the round-trip property needs
    return repr(float(value))


def save_runs(runs: Iterable[TrainRun], path: str | Path) -> None:
    """Write runs in the signals CSV format; load_runs(save_runs(x)) == x."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_HEADER)
        for run in runs:
            for s in run.samples:
                writer.writerow(
                    [
                        run.run_id,
                        _format_float(s.t),
                        _format_float(s.wheel_speed),
                        _format_float(s.gps_speed),
                        "" if s.train_speed is None else _format_float(s.train_speed),
                    ]
                )


def check_uniform_spacing(run: TrainRun, nominal_dt: float = NOMINAL_DT) -> list[str]:
    """Warnings for sample spacing deviating more than 10% from nominal."""
    warnings = []
    for prev, cur in zip(run.samples, run.samples[1:]):
        dt = cur.t - prev.t
        if abs(dt - nominal_dt) > 0.1 * nominal_dt:
            warnings.append(
                f"run {run.run_id!r}: spacing {dt:.6g}s at t={prev.t:.6g} "
                f"deviates >10% from nominal {nominal_dt:.6g}s"
            )
    return warnings
