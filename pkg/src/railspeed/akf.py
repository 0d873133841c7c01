"""Adaptive Kalman filtering of the two speed sensors.

The filter tracks state [speed, acceleration] under a constant-
acceleration transition and measures speed twice per step (wheel and
GPS). Two adaptation schemes are provided:

* covariance matching: the innovation covariance is estimated over a
  sliding window as C = (1/N) sum(nu nu^T); the measurement covariance is
  re-estimated as R = C - H P- H^T (floored to stay positive
  semidefinite) and the process covariance as Q = K C K^T.
* maximum likelihood: scalar multipliers for Q and R are picked from a
  grid by maximizing the innovation log-likelihood
  L = -1/2 sum(ln det S + nu^T S^-1 nu), ties resolved toward (1, 1).
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .signals import TrainRun

COND_LIMIT = 1e12
PSD_FLOOR = 1e-9


class SingularInnovationError(RuntimeError):
    """Innovation covariance is numerically singular."""

    def __init__(self, condition: float):
        super().__init__(
            f"innovation covariance is ill-conditioned (cond ~ {condition:.3g}); "
            "check R and the measurement model"
        )
        self.condition = condition


@dataclass(frozen=True)
class FilterModel:
    f: np.ndarray  # state transition
    h: np.ndarray  # measurement matrix
    q: np.ndarray  # process noise covariance
    r: np.ndarray  # measurement noise covariance
    b: np.ndarray | None = None  # control matrix, optional


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    p: np.ndarray


def predict(model: FilterModel, state: FilterState, u: np.ndarray | None = None) -> FilterState:
    x = model.f @ state.x
    if model.b is not None and u is not None:
        x = x + model.b @ u
    p = model.f @ state.p @ model.f.T + model.q
    return FilterState(x=x, p=p)


def update(model: FilterModel, state: FilterState, z: np.ndarray) -> tuple[FilterState, np.ndarray, np.ndarray]:
    """Measurement update; returns (posterior, innovation, innovation cov)."""
    nu = z - model.h @ state.x
    s = model.h @ state.p @ model.h.T + model.r
    condition = np.linalg.cond(s)
    if not np.isfinite(condition) or condition > COND_LIMIT:
        raise SingularInnovationError(condition)
    k = state.p @ model.h.T @ np.linalg.inv(s)
    x = state.x + k @ nu
    p = (np.eye(len(state.x)) - k @ model.h) @ state.p
    p = 0.5 * (p + p.T)
    return FilterState(x=x, p=p), nu, s


def psd_floor(m: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    """Clip eigenvalues from below so the matrix stays usable as a covariance."""
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, floor)
    return vecs @ np.diag(vals) @ vecs.T


def innovation_covariance(innovations: Iterable[np.ndarray]) -> np.ndarray:
    nus = list(innovations)
    if not nus:
        raise ValueError("need at least one innovation")
    acc = np.zeros((len(nus[0]), len(nus[0])))
    for nu in nus:
        acc += np.outer(nu, nu)
    return acc / len(nus)


def adapt_covariance_matching(
    innovations: Iterable[np.ndarray],
    model: FilterModel,
    prior: FilterState,
    kalman_gain: np.ndarray,
    adapt_q: bool = True,
) -> FilterModel:
    """Re-estimate R (and optionally Q) from a window of innovations.

    `prior` is the predicted state at the step the window ends on; the
    gain is the one used in that step's update.
    """
    c = innovation_covariance(innovations)
    r = psd_floor(c - model.h @ prior.p @ model.h.T)
    q = model.q
    if adapt_q:
        q = psd_floor(kalman_gain @ c @ kalman_gain.T)
    return replace(model, r=r, q=q)


def innovation_loglik(nus: list[np.ndarray], ss: list[np.ndarray]) -> float:
    total = 0.0
    for nu, s in zip(nus, ss):
        sign, logdet = np.linalg.slogdet(s)
        if sign <= 0:
            raise SingularInnovationError(np.linalg.cond(s))
        total += logdet + float(nu @ np.linalg.solve(s, nu))
    return -0.5 * total


def adapt_max_likelihood(
    rerun: Callable[[float, float], tuple[list[np.ndarray], list[np.ndarray]]],
    grid: Iterable[float],
) -> tuple[float, float]:
    """Pick (q_scale, r_scale) from grid x grid maximizing the innovation
    log-likelihood. Candidates are tried nearest (1, 1) first and only a
    strictly better likelihood displaces the incumbent, so exact ties
    resolve toward leaving the covariances alone.
    """
    candidates = sorted(
        itertools.product(grid, grid),
        key=lambda qr: (math.hypot(math.log(qr[0]), math.log(qr[1])), qr),
    )
    if not candidates:
        raise ValueError("empty adaptation grid")
    best = None
    best_loglik = -math.inf
    for q_scale, r_scale in candidates:
        if q_scale <= 0 or r_scale <= 0:
            raise ValueError("adaptation scales must be > 0")
        nus, ss = rerun(q_scale, r_scale)
        loglik = innovation_loglik(nus, ss)
        if loglik > best_loglik:
            best = (q_scale, r_scale)
            best_loglik = loglik
    return best


# --- run-level driver ------------------------------------------------------

ADAPTATION_MODES = ("fixed", "covariance", "ml")


@dataclass(frozen=True)
class AkfConfig:
    mode: str = "covariance"
    window: int = 30
    q0: float = 0.05  # white-acceleration process noise intensity
    r_wheel: float = 0.25
    r_gps: float = 0.25
    adapt_q: bool = True
    ml_grid: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0, 10.0)
    p0_speed: float = 10.0
    p0_accel: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ADAPTATION_MODES:
            raise ValueError(f"mode must be one of {ADAPTATION_MODES}, got {self.mode!r}")
        if self.window < 2:
            raise ValueError(f"adaptation window must be >= 2, got {self.window}")
        if min(self.q0, self.r_wheel, self.r_gps) <= 0:
            raise ValueError("q0, r_wheel, r_gps must be > 0")
        object.__setattr__(self, "ml_grid", tuple(float(g) for g in self.ml_grid))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "window": self.window,
            "q0": self.q0,
            "r_wheel": self.r_wheel,
            "r_gps": self.r_gps,
            "adapt_q": self.adapt_q,
            "ml_grid": list(self.ml_grid),
            "p0_speed": self.p0_speed,
            "p0_accel": self.p0_accel,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AkfConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        cfg = cls(**known)
        if "ml_grid" in data:
            cfg = replace(cfg, ml_grid=tuple(data["ml_grid"]))
        return cfg


def save_config(config: AkfConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_config(path: str | Path) -> AkfConfig:
    return AkfConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _model_for_step(config: AkfConfig, dt: float, q_scale: float = 1.0, r_scale: float = 1.0) -> FilterModel:
    f = np.array([[1.0, dt], [0.0, 1.0]])
    h = np.array([[1.0, 0.0], [1.0, 0.0]])
    q = config.q0 * q_scale * np.array(
        [[0.25 * dt**4, 0.5 * dt**3], [0.5 * dt**3, dt**2]]
    )
    r = r_scale * np.diag([config.r_wheel, config.r_gps])
    return FilterModel(f=f, h=h, q=q, r=r)


def _filter_pass(
    run: TrainRun,
    config: AkfConfig,
    q_scale: float = 1.0,
    r_scale: float = 1.0,
    adapt: bool = False,
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    times = run.times()
    z0 = np.array([run.samples[0].wheel_speed, run.samples[0].gps_speed])
    state = FilterState(
        x=np.array([float(z0.mean()), 0.0]),
        p=np.diag([config.p0_speed, config.p0_accel]),
    )
    estimates = np.empty(len(run))
    estimates[0] = state.x[0]
    nus: list[np.ndarray] = []
    ss: list[np.ndarray] = []

    window: deque[np.ndarray] = deque(maxlen=config.window)
    model = _model_for_step(config, dt=1.0, q_scale=q_scale, r_scale=r_scale)
    adapted_q = model.q
    adapted_r = model.r

    for i in range(1, len(run)):
        dt = times[i] - times[i - 1]
        step_model = _model_for_step(config, dt=dt, q_scale=q_scale, r_scale=r_scale)
        step_model = replace(step_model, r=adapted_r, q=adapted_q if adapt else step_model.q)
        prior = predict(step_model, state)
        z = np.array([run.samples[i].wheel_speed, run.samples[i].gps_speed])
        state, nu, s = update(step_model, prior, z)
        nus.append(nu)
        ss.append(s)
        estimates[i] = state.x[0]
        if adapt:
            window.append(nu)
            if len(window) == config.window:
                gain = prior.p @ step_model.h.T @ np.linalg.inv(s)
                refit = adapt_covariance_matching(
                    window, step_model, prior, gain, adapt_q=config.adapt_q
                )
                adapted_r = refit.r
                if config.adapt_q:
                    adapted_q = refit.q
    return estimates, nus, ss


def run_akf(run: TrainRun, config: AkfConfig | None = None) -> np.ndarray:
    """Filtered speed estimate at every sample of the run, clamped at 0."""
    config = config or AkfConfig()
    if config.mode == "ml":
        q_scale, r_scale = adapt_max_likelihood(
            lambda qs, rs: _filter_pass(run, config, qs, rs)[1:],
            config.ml_grid,
        )
        estimates, _, _ = _filter_pass(run, config, q_scale, r_scale)
    else:
        estimates, _, _ = _filter_pass(run, config, adapt=(config.mode == "covariance"))
    return np.maximum(estimates, 0.0)
