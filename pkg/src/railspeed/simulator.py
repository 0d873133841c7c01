"""Synthetic train-run generation.

Reproduces the phenomenology of the report scenarios: piecewise
acceleration/coast/brake speed profiles, WSP wheel-speed oscillation
during braking, GPS bias and noise, and odometer error steps.

Channel model, per timestep t:

    train_speed(t)  continuous piecewise profile (ground truth)
    wheel_speed(t) = train_speed(t) * slip(t) * odo(t) + wheel noise
    gps_speed(t)   = train_speed(t) + gps_bias + gps noise

slip(t) is 1 outside the WSP window; inside it dips periodically with a
raised-cosine shape of depth up to max_slip_fraction. odo(t) is 1 before
the odometer error starts and the error factor afterwards. Noise is
Gaussian truncated at +/-3 sigma (so the documented WSP lower bound is a
hard bound, not a probabilistic one) and channels are clipped at zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream
from .signals import SensorSample, TrainRun

COAST_DECEL = 0.02  # m/s^2, gentle coasting slope; tunable default
PEAK_SPEED = 31.3877  # m/s, attained exactly once in the benchmark suite
GPS_BIAS_PRESET = 1.0  # m/s, mirrors the "GPS about 1 m/s high" scenario

PHASE_KINDS = ("accelerate", "constant", "coast", "brake")


class ScenarioError(ValueError):
    """Invalid scenario specification."""


@dataclass(frozen=True)
class Phase:
    kind: str
    duration: float
    target_speed: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in PHASE_KINDS:
            raise ScenarioError(f"unknown phase kind {self.kind!r}")
        if self.duration <= 0:
            raise ScenarioError(f"phase duration must be > 0, got {self.duration}")
        if self.kind in ("accelerate", "brake"):
            if self.target_speed is None or self.target_speed < 0:
                raise ScenarioError(f"{self.kind} phase needs target_speed >= 0")


@dataclass(frozen=True)
class WspSpec:
    start_t: float
    end_t: float
    max_slip_fraction: float = 0.5
    cycle_period: float = 3.0

    def __post_init__(self) -> None:
        if not self.start_t < self.end_t:
            raise ScenarioError("WSP window needs start_t < end_t")
        if not 0.0 < self.max_slip_fraction < 1.0:
            raise ScenarioError("max_slip_fraction must be in (0, 1)")
        if self.cycle_period <= 0:
            raise ScenarioError("cycle_period must be > 0")


@dataclass(frozen=True)
class OdometerError:
    start_t: float
    factor: float

    def __post_init__(self) -> None:
        if self.factor <= 0:
            raise ScenarioError(f"odometer factor must be > 0, got {self.factor}")


@dataclass(frozen=True)
class ScenarioSpec:
    phases: tuple[Phase, ...]
    gps_noise_sigma: float = 0.0
    gps_bias: float = 0.0
    wheel_noise_sigma: float = 0.0
    odometer_error: OdometerError | None = None
    wsp: WspSpec | None = None
    seed: int = 0
    dt: float = 1.0
    run_id: str = "sim"

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise ScenarioError("scenario needs at least one phase")
        if self.gps_noise_sigma < 0 or self.wheel_noise_sigma < 0:
            raise ScenarioError("noise sigmas must be >= 0")
        if self.dt <= 0:
            raise ScenarioError("dt must be > 0")

    @property
    def total_duration(self) -> float:
        return sum(p.duration for p in self.phases)


@dataclass(frozen=True)
class Segment:
    """One linear piece of the ground-truth profile: v(t) = v0 + rate*(t-t0)."""

    t0: float
    t1: float
    v0: float
    rate: float

    def speed_at(self, t: float) -> float:
        return max(0.0, self.v0 + self.rate * (t - self.t0))


def build_profile(phases: tuple[Phase, ...], v_start: float = 0.0) -> list[Segment]:
    """Piecewise-linear ground-truth segments, continuous across boundaries."""
    segments = []
    t = 0.0
    v = v_start
    for phase in phases:
        if phase.kind == "accelerate" or phase.kind == "brake":
            rate = (phase.target_speed - v) / phase.duration
        elif phase.kind == "constant":
            rate = 0.0
        else:  # coast
            rate = -COAST_DECEL
        segments.append(Segment(t0=t, t1=t + phase.duration, v0=v, rate=rate))
        t += phase.duration
        v = max(0.0, v + rate * phase.duration)
    return segments


def _speed_at(segments: list[Segment], t: float) -> float:
    for seg in segments:
        if t < seg.t1 or seg is segments[-1]:
            return seg.speed_at(min(t, seg.t1))
    return segments[-1].speed_at(segments[-1].t1)


def _slip(t: float, wsp: WspSpec | None) -> float:
    if wsp is None or not (wsp.start_t <= t <= wsp.end_t):
        return 1.0
    phase = math.fmod(t - wsp.start_t, wsp.cycle_period)
    dip = 0.5 * (1.0 - math.cos(2.0 * math.pi * phase / wsp.cycle_period))
    return 1.0 - wsp.max_slip_fraction * dip


def _odo(t: float, err: OdometerError | None) -> float:
    if err is None or t < err.start_t:
        return 1.0
    return err.factor


def _truncated_normal(rng: np.random.Generator, sigma: float, n: int) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(n)
    return np.clip(rng.normal(0.0, sigma, size=n), -3.0 * sigma, 3.0 * sigma)


def simulate(spec: ScenarioSpec) -> TrainRun:
    """Generate one TrainRun from a scenario; deterministic given spec.seed."""
    segments = build_profile(spec.phases)
    total = spec.total_duration
    if spec.wsp is not None and spec.wsp.end_t > total + 1e-9:
        final_speed = _speed_at(segments, total)
        if final_speed > 1e-9:
            raise ScenarioError(
                f"WSP window ends at {spec.wsp.end_t}s, past the profile end "
                f"({total}s) while speed is still {final_speed:.3g} m/s"
            )

    n = int(math.floor(total / spec.dt + 1e-9)) + 1
    times = np.arange(n) * spec.dt
    truth = np.array([_speed_at(segments, t) for t in times])
    slip = np.array([_slip(t, spec.wsp) for t in times])
    odo = np.array([_odo(t, spec.odometer_error) for t in times])

    rng = stream(spec.seed, "sim")
    wheel_noise = _truncated_normal(rng, spec.wheel_noise_sigma, n)
    gps_noise = _truncated_normal(rng, spec.gps_noise_sigma, n)

    wheel = np.maximum(0.0, truth * slip * odo + wheel_noise)
    gps = np.maximum(0.0, truth + spec.gps_bias + gps_noise)

    samples = tuple(
        SensorSample(
            t=float(times[i]),
            wheel_speed=float(wheel[i]),
            gps_speed=float(gps[i]),
            train_speed=float(truth[i]),
        )
        for i in range(n)
    )
    return TrainRun(
        run_id=spec.run_id,
        samples=samples,
        has_wsp=spec.wsp is not None,
        role="test" if spec.run_id.startswith("test") else "train",
    )


def max_ramp_rate(spec: ScenarioSpec) -> float:
    """Steepest |dv/dt| implied by any phase (the continuity bound)."""
    return max(abs(seg.rate) for seg in build_profile(spec.phases))


# --- benchmark suite -------------------------------------------------------

def _phase_plan_plain(total: float, peak: float, rng: np.random.Generator) -> tuple[Phase, ...]:
    accel = float(rng.integers(int(total * 0.25), int(total * 0.4)))
    brake = float(rng.integers(int(total * 0.25), int(total * 0.4)))
    hold = total - accel - brake
    mid = Phase("coast" if rng.random() < 0.5 else "constant", hold)
    return (
        Phase("accelerate", accel, peak),
        mid,
        Phase("brake", brake, 0.0),
    )


def _phase_plan_wsp(total: float, peak: float, rng: np.random.Generator) -> tuple[tuple[Phase, ...], WspSpec]:
    accel = float(rng.integers(int(total * 0.2), int(total * 0.3)))
    brake = float(rng.integers(int(total * 0.25), int(total * 0.35)))
    hold = total - accel - brake
    phases = (
        Phase("accelerate", accel, peak),
        Phase("constant", hold),
        Phase("brake", brake, 0.0),
    )
    brake_start = accel + hold
    wsp = WspSpec(start_t=brake_start + 2.0, end_t=brake_start + brake * 0.85)
    return phases, wsp


def make_benchmark_suite(seed: int = 42) -> list[TrainRun]:
    """Seventeen-run suite: 13 without WSP, 4 with, two designated test runs.

    Non-test runs total 5205 samples and the test runs 947 at 1 Hz. One
    fault-free run attains the peak 31.3877 m/s exactly, so normalizing by
    that constant maps the suite's channel maximum to 1. All other runs
    keep enough headroom (peaks <= 28 m/s, bias <= 1, noise truncated at
    3 sigma) that the peak cannot be exceeded.
    """
    rng = stream(seed, "sim")
    specs: list[ScenarioSpec] = []

    # fault-free run attaining the normalization peak exactly
    specs.append(
        ScenarioSpec(
            phases=(
                Phase("accelerate", 120.0, PEAK_SPEED),
                Phase("constant", 106.0, None),
                Phase("brake", 120.0, 0.0),
            ),
            seed=int(rng.integers(2**31)),
            run_id="train-plain-01",
        )
    )

    # plain runs, some with odometer error or GPS bias faults
    for i in range(2, 13):
        peak = float(rng.uniform(12.0, 26.0))
        phases = _phase_plan_plain(346.0, peak, rng)
        odometer = None
        bias = 0.0
        if i in (6, 7, 8, 9):  # odometer error injected at braking start
            brake_start = phases[0].duration + phases[1].duration
            odometer = OdometerError(start_t=brake_start, factor=1.2)
        if i in (6, 7, 10, 11, 12):
            bias = GPS_BIAS_PRESET
        specs.append(
            ScenarioSpec(
                phases=phases,
                gps_noise_sigma=float(rng.uniform(0.2, 0.3)),
                gps_bias=bias,
                wheel_noise_sigma=float(rng.uniform(0.05, 0.12)),
                odometer_error=odometer,
                seed=int(rng.integers(2**31)),
                run_id=f"train-plain-{i:02d}",
            )
        )

    # WSP runs: oscillating wheel speed during braking
    for i in range(1, 4):
        peak = float(rng.uniform(12.0, 16.0))
        phases, wsp = _phase_plan_wsp(346.0, peak, rng)
        specs.append(
            ScenarioSpec(
                phases=phases,
                gps_noise_sigma=float(rng.uniform(0.2, 0.3)),
                wheel_noise_sigma=float(rng.uniform(0.05, 0.12)),
                wsp=wsp,
                seed=int(rng.integers(2**31)),
                run_id=f"train-wsp-{i:02d}",
            )
        )

    # designated test runs, one per WSP condition
    specs.append(
        ScenarioSpec(
            phases=(
                Phase("accelerate", 180.0, 27.5),
                Phase("coast", 120.0, None),
                Phase("brake", 173.0, 0.0),
            ),
            gps_noise_sigma=0.25,
            wheel_noise_sigma=0.08,
            seed=int(rng.integers(2**31)),
            run_id="test-plain",
        )
    )
    wsp_phases = (
        Phase("accelerate", 100.0, 13.5),
        Phase("constant", 250.0, None),
        Phase("brake", 122.0, 0.0),
    )
    specs.append(
        ScenarioSpec(
            phases=wsp_phases,
            gps_noise_sigma=0.25,
            wheel_noise_sigma=0.08,
            wsp=WspSpec(start_t=352.0, end_t=455.0),
            seed=int(rng.integers(2**31)),
            run_id="test-wsp",
        )
    )
    return [simulate(s) for s in specs]


# --- JSON serialization ----------------------------------------------------

def scenario_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "run_id": spec.run_id,
        "phases": [
            {"kind": p.kind, "duration": p.duration, "target_speed": p.target_speed}
            for p in spec.phases
        ],
        "gps_noise_sigma": spec.gps_noise_sigma,
        "gps_bias": spec.gps_bias,
        "wheel_noise_sigma": spec.wheel_noise_sigma,
        "odometer_error": (
            None
            if spec.odometer_error is None
            else {"start_t": spec.odometer_error.start_t, "factor": spec.odometer_error.factor}
        ),
        "wsp": (
            None
            if spec.wsp is None
            else {
                "start_t": spec.wsp.start_t,
                "end_t": spec.wsp.end_t,
                "max_slip_fraction": spec.wsp.max_slip_fraction,
                "cycle_period": spec.wsp.cycle_period,
            }
        ),
        "seed": spec.seed,
        "dt": spec.dt,
    }


def scenario_from_dict(data: dict) -> ScenarioSpec:
    try:
        phases = tuple(
            Phase(
                kind=p["kind"],
                duration=p["duration"],
                target_speed=p.get("target_speed"),
            )
            for p in data["phases"]
        )
        odometer = data.get("odometer_error")
        wsp = data.get("wsp")
        return ScenarioSpec(
            phases=phases,
            gps_noise_sigma=data.get("gps_noise_sigma", 0.0),
            gps_bias=data.get("gps_bias", 0.0),
            wheel_noise_sigma=data.get("wheel_noise_sigma", 0.0),
            odometer_error=None if odometer is None else OdometerError(**odometer),
            wsp=None if wsp is None else WspSpec(**wsp),
            seed=data.get("seed", 0),
            dt=data.get("dt", 1.0),
            run_id=data.get("run_id", "sim"),
        )
    except (KeyError, TypeError) as err:
        raise ScenarioError(f"bad scenario JSON: {err}") from None


def load_scenario(path: str | Path) -> ScenarioSpec:
    with Path(path).open(encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
