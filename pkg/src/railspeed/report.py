"""Evaluation metrics and report artifacts.

Estimator traces are compared against ground truth on the intersection
of their timestamps, so estimators with different warm-up lengths are
scored on the same samples. Each estimator's RMSE over its own full
overlap with the truth is reported alongside. Artifacts are a CSV/JSON
report plus two static SVG charts per run (speed curves and error
curves) that re-render byte-identically.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import TrainRun

ESTIMATOR_LABELS = (
    "akf",
    "single2d",
    "single1d",
    "multibranch",
    "wheel-baseline",
    "gps-baseline",
)

# RMSE values (m/s) reported for these estimator families in the original
# experiments, whose dataset is not public. Context only: they are not
# reproduction targets for the synthetic benchmark suite.
REFERENCE_RMSE = {
    "akf": {"plain": 0.4832, "wsp": 0.5274},
    "single2d": {"plain": 1.2991, "wsp": 0.4170},
    "single1d": {"plain": 0.6965, "wsp": None},
    "multibranch": {"plain": 0.3809, "wsp": 0.4241},
}


class EvaluationError(ValueError):
    """Traces and truth cannot be compared as requested."""


@dataclass(frozen=True)
class SpeedEstimateTrace:
    run_id: str
    entries: tuple[tuple[float, float], ...]  # (t, estimate m/s)
    estimator: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((float(t), float(v)) for t, v in self.entries))
        for t, v in self.entries:
            if not (math.isfinite(t) and math.isfinite(v)):
                raise EvaluationError(f"non-finite entry ({t}, {v}) in trace {self.estimator!r}")
            if v < 0:
                raise EvaluationError(f"negative estimate {v} at t={t} in trace {self.estimator!r}")

    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.entries])


@dataclass(frozen=True)
class EstimatorMetrics:
    estimator: str
    rmse: float  # over the common timestamp set
    max_abs_error: float
    rmse_full_overlap: float  # over this estimator's own overlap with truth
    error_trace: tuple[tuple[float, float], ...]  # (t, estimate - truth)


@dataclass(frozen=True)
class EvalReport:
    run_id: str
    timestamps: tuple[float, ...]  # common evaluation set
    rows: tuple[EstimatorMetrics, ...]  # sorted by rmse ascending


def sensor_baseline(run: TrainRun, channel: str) -> SpeedEstimateTrace:
    """The raw sensor reading treated as a speed estimate."""
    if channel not in ("wheel", "gps"):
        raise EvaluationError(f"channel must be 'wheel' or 'gps', got {channel!r}")
    entries = tuple(
        (s.t, s.wheel_speed if channel == "wheel" else s.gps_speed) for s in run.samples
    )
    return SpeedEstimateTrace(run_id=run.run_id, entries=entries, estimator=f"{channel}-baseline")


def _truth_by_time(truth: TrainRun) -> dict[float, float]:
    table = {s.t: s.train_speed for s in truth.samples if s.train_speed is not None}
    if not table:
        raise EvaluationError(f"run {truth.run_id!r} has no ground truth")
    return table


def rmse(trace: SpeedEstimateTrace, truth: TrainRun) -> float:
    """Root mean square error over the trace's overlap with the truth."""
    table = _truth_by_time(truth)
    errors = [v - table[t] for t, v in trace.entries if t in table]
    if not errors:
        raise EvaluationError(
            f"trace {trace.estimator!r} shares no timestamps with run {truth.run_id!r}"
        )
    return float(np.sqrt(np.mean(np.square(errors))))


def compare(traces: list[SpeedEstimateTrace], truth: TrainRun) -> EvalReport:
    """Score every trace on the timestamps all of them share with truth."""
    if not traces:
        raise EvaluationError("no traces to compare")
    for trace in traces:
        if trace.run_id != truth.run_id:
            raise EvaluationError(
                f"trace {trace.estimator!r} is for run {trace.run_id!r}, truth is {truth.run_id!r}"
            )
    table = _truth_by_time(truth)
    common = set(table)
    for trace in traces:
        common &= {t for t, _ in trace.entries}
    if not common:
        raise EvaluationError("traces share no common timestamp with the truth")
    common = sorted(common)

    rows = []
    for trace in traces:
        by_time = dict(trace.entries)
        errors = np.array([by_time[t] - table[t] for t in common])
        rows.append(
            EstimatorMetrics(
                estimator=trace.estimator,
                rmse=float(np.sqrt(np.mean(errors**2))),
                max_abs_error=float(np.max(np.abs(errors))),
                rmse_full_overlap=rmse(trace, truth),
                error_trace=tuple((float(t), float(e)) for t, e in zip(common, errors)),
            )
        )
    rows.sort(key=lambda r: (r.rmse, r.estimator))
    return EvalReport(run_id=truth.run_id, timestamps=tuple(common), rows=tuple(rows))


# --- artifact emission -----------------------------------------------------

WIDTH, HEIGHT = 1200, 400
MARGIN = 55
PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _svg_chart(title: str, ylabel: str, series: list[tuple[str, list[tuple[float, float]]]]) -> str:
    """Static line chart. Series with fewer than 2 points are dropped."""
    kept = []
    for name, points in series:
        if len(points) < 2:
            warnings.warn(f"series {name!r} has fewer than 2 points; omitted from chart")
            continue
        kept.append((name, points))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="15">{title}</text>',
    ]
    if kept:
        xs = [p[0] for _, pts in kept for p in pts]
        ys = [p[1] for _, pts in kept for p in pts]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
        plot_w = WIDTH - 2 * MARGIN
        plot_h = HEIGHT - 2 * MARGIN

        def sx(x: float) -> float:
            return MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w

        def sy(y: float) -> float:
            return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h

        # axes with end-value ticks
        parts.append(
            f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
            f'y2="{HEIGHT - MARGIN}" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 18}" font-size="11" text-anchor="middle">{_fmt(x_lo)}</text>'
        )
        parts.append(
            f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 18}" font-size="11" text-anchor="middle">{_fmt(x_hi)}</text>'
        )
        parts.append(
            f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN + 4}" font-size="11" text-anchor="end">{_fmt(y_lo)}</text>'
        )
        parts.append(
            f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" font-size="11" text-anchor="end">{_fmt(y_hi)}</text>'
        )
        parts.append(
            f'<text x="{WIDTH // 2}" y="{HEIGHT - 10}" font-size="12" text-anchor="middle">time (s)</text>'
        )
        parts.append(
            f'<text x="15" y="{HEIGHT // 2}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 15 {HEIGHT // 2})">{ylabel}</text>'
        )
        for i, (name, points) in enumerate(kept):
            color = PALETTE[i % len(PALETTE)]
            coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in points)
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.3"/>'
            )
            legend_x = MARGIN + 10 + 150 * i
            parts.append(
                f'<line x1="{legend_x}" y1="34" x2="{legend_x + 18}" y2="34" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            parts.append(f'<text x="{legend_x + 22}" y="38" font-size="12">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def report_to_dict(report: EvalReport, traces: list[SpeedEstimateTrace] | None = None) -> dict:
    by_label = {t.estimator: t for t in (traces or [])}
    rows = []
    for row in report.rows:
        entry = {
            "estimator": row.estimator,
            "rmse_mps": row.rmse,
            "max_abs_error_mps": row.max_abs_error,
            "rmse_full_overlap_mps": row.rmse_full_overlap,
            "error_trace": [[t, e] for t, e in row.error_trace],
        }
        if row.estimator in by_label:
            entry["trace"] = [[t, v] for t, v in by_label[row.estimator].entries]
        rows.append(entry)
    return {
        "run_id": report.run_id,
        "n_common_timestamps": len(report.timestamps),
        "estimators": rows,
        "reference_rmse_context": REFERENCE_RMSE,
    }


def write_report_csv(reports: list[EvalReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_id", "estimator", "rmse_mps", "max_abs_error_mps"])
        for report in reports:
            for row in report.rows:
                writer.writerow(
                    [report.run_id, row.estimator, repr(row.rmse), repr(row.max_abs_error)]
                )


def write_report_json(
    reports: list[EvalReport],
    path: str | Path,
    traces_by_run: dict[str, list[SpeedEstimateTrace]] | None = None,
) -> None:
    payload = [
        report_to_dict(r, (traces_by_run or {}).get(r.run_id)) for r in reports
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def render_plots(
    report: EvalReport,
    truth: TrainRun,
    out_dir: str | Path,
    traces: list[SpeedEstimateTrace] | None = None,
) -> list[Path]:
    """Emit speeds_<run>.svg, errors_<run>.svg, report.csv and report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    speed_series: list[tuple[str, list[tuple[float, float]]]] = []
    truth_points = [(s.t, s.train_speed) for s in truth.samples if s.train_speed is not None]
    speed_series.append(("true speed", truth_points))
    speed_series.append(("wheel speed", [(s.t, s.wheel_speed) for s in truth.samples]))
    speed_series.append(("gps speed", [(s.t, s.gps_speed) for s in truth.samples]))
    for trace in traces or []:
        if trace.estimator in ("wheel-baseline", "gps-baseline"):
            continue  # raw channels are already drawn
        speed_series.append((trace.estimator, list(trace.entries)))

    error_series = [(row.estimator, list(row.error_trace)) for row in report.rows]

    files = []
    speeds_path = out / f"speeds_{report.run_id}.svg"
    speeds_path.write_text(
        _svg_chart(f"run {report.run_id}: speed", "speed (m/s)", speed_series),
        encoding="utf-8",
    )
    files.append(speeds_path)
    errors_path = out / f"errors_{report.run_id}.svg"
    errors_path.write_text(
        _svg_chart(f"run {report.run_id}: estimate - truth", "error (m/s)", error_series),
        encoding="utf-8",
    )
    files.append(errors_path)
    csv_path = out / "report.csv"
    write_report_csv([report], csv_path)
    files.append(csv_path)
    json_path = out / "report.json"
    write_report_json([report], json_path, {report.run_id: traces or []})
    files.append(json_path)
    return files
