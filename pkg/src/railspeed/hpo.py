"""Hyperparameter search: TPE sampler plus median pruner.

The sampler splits finished trials into an elite set (best ceil(gamma*n))
and the rest, fits a one-dimensional kernel density per parameter for
each set (Gaussian mixture over transformed coordinates: log for log
ranges, rounded for integers, frequency weights for categoricals), draws
candidates from the elite densities and keeps the candidate maximizing
the density ratio l(x)/g(x). Kernel widths follow the adaptive Parzen
rule: each observation's width is its larger gap to the sorted
neighbours, and a range-wide kernel at the midpoint acts as a prior so
unexplored regions keep probability mass. Until enough trials finish the
sampler falls back to uniform draws.

The pruner stops a trial whose validation loss at some epoch is strictly
above the median of what prior trials reported at that same epoch, after
trial/epoch warmups.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .architectures import ArchConfig, TrainingDivergedError, build, train, trainer_from_arch
from .dataset import DatasetSplit
from .rng import stream

STARTUP_TRIALS = 10
GAMMA = 0.25
N_CANDIDATES = 24
WARMUP_TRIALS = 5
WARMUP_EPOCHS = 5

TRIAL_STATUS = ("completed", "pruned", "failed")


class SearchSpaceError(ValueError):
    """Malformed search space or sampling request."""


class StudyError(RuntimeError):
    """The study produced no completed trial."""


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(self.choices))
        if not self.choices:
            raise SearchSpaceError("categorical domain needs at least one choice")


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise SearchSpaceError(f"empty int range [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class FloatRange:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise SearchSpaceError(f"empty float range [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class FloatLogRange:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not 0 < self.lo < self.hi:
            raise SearchSpaceError(f"log range needs 0 < lo < hi, got [{self.lo}, {self.hi}]")


Domain = Categorical | IntRange | FloatRange | FloatLogRange
SearchSpace = dict[str, Domain]


def table1_space(arch: str) -> SearchSpace:
    """The searched ranges for one architecture."""
    shapes = {
        "single2d": tuple((n, 3, 1) for n in (10, 20, 30, 40)),
        "single1d": tuple((n, 3) for n in (10, 20, 30, 40)),
        "multibranch": tuple((n, 1) for n in (10, 20, 30, 40)),
    }
    if arch not in shapes:
        raise SearchSpaceError(f"unknown architecture {arch!r}")
    space: SearchSpace = {
        "input_shape": Categorical(shapes[arch]),
        "n_blocks": IntRange(1, 3 if arch == "multibranch" else 20),
        "n_filters": IntRange(8, 64),
        "kernel_size": (
            Categorical(((3, 2), (5, 2), (7, 2))) if arch == "single2d" else IntRange(2, 10)
        ),
        "dropout_rate": FloatRange(0.0, 0.5),
        "learning_rate": FloatLogRange(1e-5, 1e-2),
        "batch_size": Categorical((8, 16, 32, 64)),
    }
    return space


def space_to_dict(space: SearchSpace) -> dict:
    out = {}
    for name, domain in space.items():
        if isinstance(domain, Categorical):
            out[name] = {"kind": "categorical", "choices": list(domain.choices)}
        elif isinstance(domain, IntRange):
            out[name] = {"kind": "int_range", "lo": domain.lo, "hi": domain.hi}
        elif isinstance(domain, FloatRange):
            out[name] = {"kind": "float_range", "lo": domain.lo, "hi": domain.hi}
        else:
            out[name] = {"kind": "float_log_range", "lo": domain.lo, "hi": domain.hi}
    return out


def space_from_dict(data: dict) -> SearchSpace:
    kinds = {
        "categorical": lambda d: Categorical(
            tuple(tuple(c) if isinstance(c, list) else c for c in d["choices"])
        ),
        "int_range": lambda d: IntRange(d["lo"], d["hi"]),
        "float_range": lambda d: FloatRange(d["lo"], d["hi"]),
        "float_log_range": lambda d: FloatLogRange(d["lo"], d["hi"]),
    }
    space: SearchSpace = {}
    for name, desc in data.items():
        try:
            space[name] = kinds[desc["kind"]](desc)
        except KeyError as err:
            raise SearchSpaceError(f"bad domain for {name!r}: {err}") from None
    return space


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    intermediate: list[tuple[int, float]] = field(default_factory=list)
    status: str = "completed"
    best_val_loss: float = math.inf

    def to_json(self) -> str:
        return json.dumps(
            {
                "trial_id": self.trial_id,
                "params": self.params,
                "intermediate": self.intermediate,
                "status": self.status,
                "best_val_loss": self.best_val_loss,
            }
        )


@dataclass(frozen=True)
class StudyResult:
    trials: tuple[TrialRecord, ...]
    best: TrialRecord
    seed: int

    def best_so_far(self) -> list[float]:
        """Minimum completed loss after each trial (inf until one completes)."""
        curve = []
        best = math.inf
        for trial in self.trials:
            if trial.status == "completed":
                best = min(best, trial.best_val_loss)
            curve.append(best)
        return curve


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> dict:
    params = {}
    for name, domain in space.items():
        if isinstance(domain, Categorical):
            params[name] = domain.choices[rng.integers(len(domain.choices))]
        elif isinstance(domain, IntRange):
            params[name] = int(rng.integers(domain.lo, domain.hi + 1))
        elif isinstance(domain, FloatRange):
            params[name] = float(rng.uniform(domain.lo, domain.hi))
        else:
            drawn = math.exp(rng.uniform(math.log(domain.lo), math.log(domain.hi)))
            params[name] = float(min(max(drawn, domain.lo), domain.hi))
    return params


def _transform(domain: Domain, value) -> float:
    if isinstance(domain, FloatLogRange):
        return math.log(value)
    return float(value)


def _parzen_components(values: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Means and widths of an adaptive Parzen mixture over [lo, hi].

    Each observation's width is the larger gap to its sorted neighbours,
    clipped to [span/(1+n), span]; the appended midpoint component keeps
    width = span and plays the role of a uniform-ish prior.
    """
    span = hi - lo
    mus = np.append(values, 0.5 * (lo + hi))
    sigmas = np.full(len(mus), span, dtype=np.float64)
    if len(mus) > 1:
        order = np.argsort(mus)
        sorted_mus = mus[order]
        gaps = np.diff(sorted_mus)
        left = np.concatenate(([gaps[0]], gaps))
        right = np.concatenate((gaps, [gaps[-1]]))
        sigmas[order] = np.maximum(left, right)
    sigmas[-1] = span  # prior stays wide no matter its neighbours
    return mus, np.clip(sigmas, span / (1 + len(mus)), span)


def _kde_pdf(x: float, mus: np.ndarray, sigmas: np.ndarray) -> float:
    z = (x - mus) / sigmas
    return float(np.mean(np.exp(-0.5 * z * z) / (sigmas * math.sqrt(2 * math.pi))))


def _categorical_weights(values: list, choices: tuple) -> np.ndarray:
    counts = np.array([sum(1 for v in values if v == c) for c in choices], dtype=np.float64)
    counts += 1.0  # smoothing so unseen choices keep nonzero density
    return counts / counts.sum()


def sample_tpe(
    history: Sequence[TrialRecord],
    space: SearchSpace,
    rng: np.random.Generator,
    gamma: float = GAMMA,
    n_candidates: int = N_CANDIDATES,
    startup: int = STARTUP_TRIALS,
) -> dict:
    """One new parameter set: uniform before startup, density-ratio after."""
    if not space:
        raise SearchSpaceError("empty search space")
    completed = [t for t in history if t.status == "completed"]
    if len(completed) < startup:
        return sample_uniform(space, rng)

    completed = sorted(completed, key=lambda t: t.best_val_loss)
    n_elite = max(1, math.ceil(gamma * len(completed)))
    elite, rest = completed[:n_elite], completed[n_elite:]

    # Per-parameter densities in transformed coordinates.
    models = {}
    for name, domain in space.items():
        elite_vals = [t.params[name] for t in elite]
        rest_vals = [t.params[name] for t in rest]
        if isinstance(domain, Categorical):
            w_elite = _categorical_weights(elite_vals, domain.choices)
            w_rest = (
                _categorical_weights(rest_vals, domain.choices)
                if rest_vals
                else np.full(len(domain.choices), 1.0 / len(domain.choices))
            )
            models[name] = ("cat", w_elite, w_rest)
        else:
            lo = _transform(domain, domain.lo)
            hi = _transform(domain, domain.hi)
            e = np.array([_transform(domain, v) for v in elite_vals])
            r = np.array([_transform(domain, v) for v in rest_vals])
            models[name] = ("kde", _parzen_components(e, lo, hi), _parzen_components(r, lo, hi), (lo, hi))

    best_params = None
    best_score = -math.inf
    for _ in range(n_candidates):
        params = {}
        score = 0.0
        for name, domain in space.items():
            model = models[name]
            if model[0] == "cat":
                _, w_elite, w_rest = model
                idx = int(rng.choice(len(domain.choices), p=w_elite))
                params[name] = domain.choices[idx]
                score += math.log(w_elite[idx]) - math.log(w_rest[idx])
            else:
                _, (l_mus, l_sigmas), (g_mus, g_sigmas), (lo, hi) = model
                k = rng.integers(len(l_mus))
                x = float(np.clip(l_mus[k] + rng.normal(0.0, l_sigmas[k]), lo, hi))
                l_pdf = _kde_pdf(x, l_mus, l_sigmas)
                g_pdf = _kde_pdf(x, g_mus, g_sigmas)
                score += math.log(max(l_pdf, 1e-300)) - math.log(max(g_pdf, 1e-300))
                if isinstance(domain, FloatLogRange):
                    # exp(log lo) can undershoot lo by a few ulps
                    params[name] = float(min(max(math.exp(x), domain.lo), domain.hi))
                elif isinstance(domain, IntRange):
                    params[name] = int(np.clip(round(x), domain.lo, domain.hi))
                else:
                    params[name] = x
        if score > best_score:
            best_score = score
            best_params = params
    return best_params


def should_prune(
    history: Sequence[TrialRecord],
    current: Sequence[tuple[int, float]],
    warmup_trials: int = WARMUP_TRIALS,
    warmup_epochs: int = WARMUP_EPOCHS,
) -> bool:
    """Median rule on the latest reported epoch of the current trial."""
    if not current:
        raise ValueError("current trial has no reported losses yet")
    epoch, value = current[-1]
    if epoch < warmup_epochs:
        return False
    finished = [t for t in history if t.status in ("completed", "pruned")]
    if len(finished) < warmup_trials:
        return False
    at_epoch = [
        loss for t in finished for (e, loss) in t.intermediate if e == epoch
    ]
    if len(at_epoch) < warmup_trials:
        return False  # not enough evidence at this depth
    return value > float(np.median(at_epoch))


def config_from_params(arch: str, params: dict) -> ArchConfig:
    kernel = params["kernel_size"]
    if isinstance(kernel, list):
        kernel = tuple(kernel)
    return ArchConfig(
        arch=arch,
        input_shape=tuple(params["input_shape"]),
        n_blocks=int(params["n_blocks"]),
        n_filters=int(params["n_filters"]),
        kernel_size=kernel,
        dropout_rate=float(params["dropout_rate"]),
        learning_rate=float(params["learning_rate"]),
        batch_size=int(params["batch_size"]),
    )


def run_study(
    arch: str,
    space: SearchSpace,
    budget: int,
    epoch_budget: int,
    split: "DatasetSplit | Callable[[int], DatasetSplit]",
    seed: int = 0,
    optimizer: str = "sgd",
) -> StudyResult:
    """Sequential sample / train / prune loop; deterministic given seed.

    `split` is either one DatasetSplit (then every input_shape option in
    the space must match its window length) or a callable mapping a
    window length to the split to train on, for spaces that search over
    input shapes.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if callable(split):
        split_for = split
    else:
        fixed_n = split.train[0].inputs.shape[0]

        def split_for(n: int) -> DatasetSplit:
            if n != fixed_n:
                raise SearchSpaceError(
                    f"sampled window length {n} but the split holds windows of {fixed_n}; "
                    "pass a split factory or pin input_shape in the space"
                )
            return split

    rng = stream(seed, "sampler")
    trials: list[TrialRecord] = []
    failures: list[str] = []

    for trial_id in range(budget):
        params = sample_tpe(trials, space, rng)
        trial_seed = int(rng.integers(2**31))
        record = TrialRecord(trial_id=trial_id, params=params)
        intermediate: list[tuple[int, float]] = []

        def reporter(epoch: int, val_loss: float) -> bool:
            intermediate.append((epoch, val_loss))
            if epoch >= epoch_budget - 1:
                return False  # nothing left to save by pruning
            return should_prune(trials, intermediate)

        try:
            config = config_from_params(arch, params)
            net = build(config, seed=trial_seed)
            trainer = trainer_from_arch(config, epochs=epoch_budget, seed=trial_seed, optimizer=optimizer)
            model = train(net, split_for(config.window), trainer, reporter=reporter, config=config)
            record.intermediate = intermediate
            record.status = "pruned" if model.pruned else "completed"
            if intermediate:
                record.best_val_loss = min(loss for _, loss in intermediate)
        except TrainingDivergedError as err:
            record.intermediate = intermediate
            record.status = "failed"
            record.best_val_loss = math.inf
            failures.append(f"trial {trial_id}: {err}")
        trials.append(record)

    completed = [t for t in trials if t.status == "completed"]
    if not completed:
        raise StudyError(
            "no trial completed; failures:\n" + "\n".join(failures or ["(all pruned)"])
        )
    best = min(completed, key=lambda t: t.best_val_loss)
    return StudyResult(trials=tuple(trials), best=best, seed=seed)


def write_study_jsonl(study: StudyResult, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for trial in study.trials:
            fh.write(trial.to_json() + "\n")


def write_best_config(study: StudyResult, arch: str, path: str | Path) -> None:
    config = config_from_params(arch, study.best.params)
    payload = {
        "arch_config": config.to_dict(),
        "best_val_loss": study.best.best_val_loss,
        "trial_id": study.best.trial_id,
        "seed": study.seed,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
