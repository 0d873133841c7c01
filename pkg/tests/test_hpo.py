"""Search-space domains, TPE sampler, median pruner, study loop."""

import json
import math

import numpy as np
import pytest

from railspeed import dataset, hpo
from railspeed.architectures import ArchConfig, ConfigError
from railspeed.dataset import NormalizationConfig, make_windows
from railspeed.hpo import (
    Categorical,
    FloatLogRange,
    FloatRange,
    IntRange,
    SearchSpaceError,
    StudyError,
    StudyResult,
    TrialRecord,
    config_from_params,
    run_study,
    sample_tpe,
    sample_uniform,
    should_prune,
    space_from_dict,
    space_to_dict,
    table1_space,
    write_best_config,
    write_study_jsonl,
)
from railspeed.signals import SensorSample, TrainRun


def toy_run(n_samples=80, seed=0):
    rng = np.random.default_rng(seed)
    samples = tuple(
        SensorSample(
            t=float(i),
            wheel_speed=float(8 + 4 * np.sin(i / 5) + rng.normal(0, 0.05)),
            gps_speed=float(8 + 4 * np.sin(i / 5) + rng.normal(0, 0.1)),
            train_speed=float(8 + 4 * np.sin(i / 5)),
        )
        for i in range(n_samples)
    )
    return TrainRun(run_id="train-toy", samples=samples)


def toy_split(n=10, peak=12.5):
    windows = make_windows([toy_run()], n, NormalizationConfig(peak_speed=peak))
    return dataset.split(windows, ratio=0.8, seed=0)


def in_domain(domain, value) -> bool:
    if isinstance(domain, Categorical):
        return value in domain.choices
    if isinstance(domain, IntRange):
        return isinstance(value, int) and domain.lo <= value <= domain.hi
    return domain.lo <= value <= domain.hi


# --- domains and spaces -------------------------------------------------------

def test_domain_validation():
    with pytest.raises(SearchSpaceError):
        Categorical(())
    with pytest.raises(SearchSpaceError):
        IntRange(5, 4)
    with pytest.raises(SearchSpaceError):
        FloatRange(1.0, 1.0)
    with pytest.raises(SearchSpaceError):
        FloatLogRange(0.0, 1.0)
    with pytest.raises(SearchSpaceError):
        FloatLogRange(1.0, 0.5)


def test_table1_space_shape():
    for arch in ("single2d", "single1d", "multibranch"):
        space = table1_space(arch)
        assert set(space) == {
            "input_shape",
            "n_blocks",
            "n_filters",
            "kernel_size",
            "dropout_rate",
            "learning_rate",
            "batch_size",
        }
    assert table1_space("single2d")["kernel_size"] == Categorical(((3, 2), (5, 2), (7, 2)))
    assert table1_space("single1d")["kernel_size"] == IntRange(2, 10)
    assert table1_space("multibranch")["n_blocks"] == IntRange(1, 3)
    assert table1_space("single1d")["n_blocks"] == IntRange(1, 20)
    with pytest.raises(SearchSpaceError, match="architecture"):
        table1_space("transformer")


def test_space_dict_round_trip():
    for arch in ("single2d", "single1d", "multibranch"):
        space = table1_space(arch)
        assert space_from_dict(space_to_dict(space)) == space


def test_space_from_dict_rejects_unknown_kind():
    with pytest.raises(SearchSpaceError, match="x"):
        space_from_dict({"x": {"kind": "gaussian", "lo": 0, "hi": 1}})


# --- samplers ------------------------------------------------------------------

def test_uniform_draws_stay_in_domain():
    space = table1_space("single1d")
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        params = sample_uniform(space, rng)
        for name, domain in space.items():
            assert in_domain(domain, params[name]), (name, params[name])


def test_uniform_log_draws_cover_decades():
    space = {"lr": FloatLogRange(1e-5, 1e-2)}
    rng = np.random.default_rng(1)
    draws = [sample_uniform(space, rng)["lr"] for _ in range(2000)]
    logs = np.log10(draws)
    # roughly a quarter of the mass per decade under a log-uniform law
    for decade in (-5, -4, -3):
        frac = np.mean((logs >= decade) & (logs < decade + 1))
        assert 0.15 < frac < 0.45


def test_tpe_below_startup_is_uniform():
    space = table1_space("multibranch")
    params_tpe = sample_tpe([], space, np.random.default_rng(5))
    params_uni = sample_uniform(space, np.random.default_rng(5))
    assert params_tpe == params_uni


def fake_trial(trial_id, x, loss):
    return TrialRecord(
        trial_id=trial_id,
        params={"x": x},
        intermediate=[(0, loss)],
        status="completed",
        best_val_loss=loss,
    )


def test_tpe_concentrates_on_elite_region():
    # 3 elite points near x = 3 out of 12 completed trials
    history = [fake_trial(i, 2.9 + 0.1 * i, 0.01 * (i + 1)) for i in range(3)]
    history += [fake_trial(3 + i, 6.0 + 0.3 * i, 1.0 + i) for i in range(9)]
    space = {"x": FloatRange(0.0, 10.0)}
    rng = np.random.default_rng(2)
    draws = [sample_tpe(history, space, rng)["x"] for _ in range(50)]
    assert np.mean(draws) < 5.0
    assert all(0.0 <= d <= 10.0 for d in draws)


def test_tpe_favors_majority_categorical_choice():
    history = [
        TrialRecord(i, {"b": 8}, [(0, 0.1)], "completed", 0.1) for i in range(6)
    ] + [
        TrialRecord(6 + i, {"b": 64}, [(0, 5.0)], "completed", 5.0) for i in range(6)
    ]
    space = {"b": Categorical((8, 16, 32, 64))}
    rng = np.random.default_rng(3)
    draws = [sample_tpe(history, space, rng)["b"] for _ in range(100)]
    counts = {c: draws.count(c) for c in (8, 16, 32, 64)}
    assert counts[8] == max(counts.values())


def test_tpe_samples_validate_as_configs():
    space = table1_space("single2d")
    rng = np.random.default_rng(4)
    history = []
    for i in range(15):
        params = sample_uniform(space, rng)
        history.append(TrialRecord(i, params, [(0, float(i))], "completed", float(i)))
    for _ in range(100):
        params = sample_tpe(history, space, rng)
        config_from_params("single2d", params)  # raises ConfigError on any violation


def test_tpe_ignores_unfinished_trials():
    space = {"x": FloatRange(0.0, 10.0)}
    history = [
        TrialRecord(i, {"x": 5.0}, [(0, 1.0)], "pruned", 1.0) for i in range(30)
    ]
    # only pruned/failed trials: sampler must stay in its uniform regime
    params_tpe = sample_tpe(history, space, np.random.default_rng(6))
    params_uni = sample_uniform(space, np.random.default_rng(6))
    assert params_tpe == params_uni


def test_tpe_empty_space_rejected():
    with pytest.raises(SearchSpaceError, match="empty"):
        sample_tpe([], {}, np.random.default_rng(0))


def test_parzen_widths_follow_neighbour_gaps():
    from railspeed.hpo import _parzen_components

    mus, sigmas = _parzen_components(np.array([1.0, 2.0, 9.0]), 0.0, 10.0)
    # components: observations plus one midpoint prior, which also counts
    # as a neighbour when gaps are measured
    assert list(mus) == [1.0, 2.0, 9.0, 5.0]
    assert sigmas[-1] == 10.0  # prior keeps the full span
    assert sigmas[1] == 3.0  # max(gap to 1, gap to the prior at 5)
    assert sigmas[2] == 4.0  # gap from 9 to the prior at 5
    assert sigmas[0] == 2.0  # gap of 1 clipped up to span / (1 + n)
    assert np.all(sigmas >= 10.0 / 5) and np.all(sigmas <= 10.0)


def quadratic_best(sampler_is_tpe: bool, seed: int, budget: int = 200) -> float:
    space = {"x": FloatRange(0.0, 10.0)}
    rng = np.random.default_rng(seed)
    history = []
    for i in range(budget):
        if sampler_is_tpe:
            params = sample_tpe(history, space, rng)
        else:
            params = sample_uniform(space, rng)
        loss = (params["x"] - 3.0) ** 2
        history.append(TrialRecord(i, params, [(0, loss)], "completed", loss))
    return min(t.best_val_loss for t in history)


def test_tpe_beats_uniform_on_quadratic():
    tpe = quadratic_best(True, seed=11)
    uniform = quadratic_best(False, seed=11)
    assert tpe <= uniform
    assert math.sqrt(tpe) <= 0.5  # best x within 0.5 of the optimum at 3


# --- pruner ---------------------------------------------------------------------

def finished(trial_id, epoch_losses, status="completed"):
    return TrialRecord(
        trial_id=trial_id,
        params={},
        intermediate=list(epoch_losses),
        status=status,
        best_val_loss=min(l for _, l in epoch_losses),
    )


def test_pruner_median_rule_exact():
    history = [finished(i, [(5, float(v))]) for i, v in enumerate([1, 2, 3, 4, 5])]
    assert should_prune(history, [(5, 3.5)]) is True
    assert should_prune(history, [(5, 3.0)]) is False  # strictly above, not equal
    assert should_prune(history, [(5, 2.0)]) is False


def test_pruner_small_history_example():
    history = [finished(i, [(5, float(v))]) for i, v in enumerate([1, 2, 3])]
    assert should_prune(history, [(5, 2.5)], warmup_trials=3) is True
    assert should_prune(history, [(5, 2.0)], warmup_trials=3) is False


def test_pruner_epoch_warmup():
    history = [finished(i, [(4, 0.001)]) for i in range(10)]
    assert should_prune(history, [(4, 100.0)]) is False  # epoch below warmup


def test_pruner_trial_warmup():
    history = [finished(i, [(5, 0.001)]) for i in range(4)]
    assert should_prune(history, [(5, 100.0)]) is False  # too few finished trials


def test_pruner_counts_pruned_trials_as_evidence():
    history = [finished(i, [(5, 0.001)]) for i in range(4)]
    history.append(finished(4, [(5, 0.001)], status="pruned"))
    assert should_prune(history, [(5, 100.0)]) is True


def test_pruner_ignores_failed_trials():
    history = [finished(i, [(5, 0.001)]) for i in range(4)]
    history.append(finished(4, [(5, 0.001)], status="failed"))
    assert should_prune(history, [(5, 100.0)]) is False


def test_pruner_needs_evidence_at_the_same_epoch():
    history = [finished(i, [(5, 0.001)]) for i in range(4)]
    history.append(finished(4, [(7, 0.001)]))  # five finished, four report epoch 5
    assert should_prune(history, [(5, 100.0)]) is False


def test_pruner_requires_reported_losses():
    with pytest.raises(ValueError, match="no reported"):
        should_prune([], [])


# --- study loop -------------------------------------------------------------------

def pinned_space(window=10):
    return {
        "input_shape": Categorical(((window, 3),)),
        "n_blocks": IntRange(1, 1),
        "n_filters": IntRange(8, 8),
        "kernel_size": IntRange(3, 3),
        "dropout_rate": FloatRange(0.0, 1e-6),
        "learning_rate": FloatLogRange(1e-3, 2e-3),
        "batch_size": Categorical((16,)),
    }


def test_run_study_accounting_and_determinism():
    split = toy_split()
    results = []
    for _ in range(2):
        study = run_study(
            "single1d", pinned_space(), budget=3, epoch_budget=2, split=split, seed=5
        )
        results.append(study)
    a, b = results
    assert len(a.trials) == 3
    assert all(t.status == "completed" for t in a.trials)
    assert a.best.best_val_loss == min(t.best_val_loss for t in a.trials)
    for t in a.trials:
        assert len(t.intermediate) == 2
        assert t.best_val_loss == min(loss for _, loss in t.intermediate)
    assert [t.to_json() for t in a.trials] == [t.to_json() for t in b.trials]


def test_run_study_accepts_split_factory():
    splits = {10: toy_split(10), 20: toy_split(20)}
    space = pinned_space()
    space["input_shape"] = Categorical(((10, 3), (20, 3)))
    study = run_study(
        "single1d", space, budget=4, epoch_budget=1, split=lambda n: splits[n], seed=1
    )
    assert len(study.trials) == 4
    seen = {tuple(t.params["input_shape"]) for t in study.trials}
    assert seen <= {(10, 3), (20, 3)}


def test_run_study_fixed_split_rejects_other_windows():
    space = pinned_space(window=20)  # split below holds 10-sample windows
    with pytest.raises(SearchSpaceError, match="window length"):
        run_study("single1d", space, budget=1, epoch_budget=1, split=toy_split(10), seed=0)


def test_run_study_rejects_bad_budget():
    with pytest.raises(ValueError, match="budget"):
        run_study("single1d", pinned_space(), budget=0, epoch_budget=1, split=toy_split())


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_run_study_raises_when_nothing_completes():
    # absurd normalization makes the targets huge, so every trial diverges
    windows = make_windows([toy_run()], 10, NormalizationConfig(peak_speed=1e-12))
    split = dataset.split(windows, ratio=0.8, seed=0)
    with pytest.raises(StudyError, match="no trial completed"):
        run_study("single1d", pinned_space(), budget=2, epoch_budget=2, split=split, seed=0)


def test_best_so_far_curve():
    trials = (
        finished(0, [(0, 2.0)], status="pruned"),
        finished(1, [(0, 0.5)]),
        finished(2, [(0, 0.8)]),
        finished(3, [(0, 9.0)], status="failed"),
        finished(4, [(0, 0.3)]),
    )
    study = StudyResult(trials=trials, best=trials[4], seed=0)
    assert study.best_so_far() == [math.inf, 0.5, 0.5, 0.5, 0.3]


def test_trial_record_json_round_trip():
    record = TrialRecord(3, {"lr": 1e-3}, [(0, 0.5), (1, 0.4)], "completed", 0.4)
    data = json.loads(record.to_json())
    assert data["trial_id"] == 3
    assert data["params"] == {"lr": 1e-3}
    assert data["intermediate"] == [[0, 0.5], [1, 0.4]]
    assert data["status"] == "completed"
    assert data["best_val_loss"] == 0.4


def test_config_from_params_converts_json_kernel():
    params = hpo.sample_uniform(table1_space("single2d"), np.random.default_rng(0))
    params["kernel_size"] = list(params["kernel_size"])  # as after a JSON round trip
    config = config_from_params("single2d", params)
    assert isinstance(config.kernel_size, tuple)


def test_study_writers(tmp_path):
    trials = (
        TrialRecord(0, OPTIMAL_PARAMS, [(0, 0.9)], "completed", 0.9),
        TrialRecord(1, OPTIMAL_PARAMS, [(0, 0.2)], "completed", 0.2),
    )
    study = StudyResult(trials=trials, best=trials[1], seed=7)

    jsonl = tmp_path / "trials.jsonl"
    write_study_jsonl(study, jsonl)
    lines = jsonl.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[1])["best_val_loss"] == 0.2

    best = tmp_path / "best.json"
    write_best_config(study, "single1d", best)
    payload = json.loads(best.read_text())
    assert payload["trial_id"] == 1
    assert payload["seed"] == 7
    restored = ArchConfig.from_dict(payload["arch_config"])
    assert restored.arch == "single1d"


OPTIMAL_PARAMS = {
    "input_shape": (10, 3),
    "n_blocks": 4,
    "n_filters": 53,
    "kernel_size": 2,
    "dropout_rate": 8.8e-3,
    "learning_rate": 2.0e-3,
    "batch_size": 8,
}
