"""Command-line pipeline: simulate, train, search, evaluate.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors. All
randomness flows from --seed through named per-component streams, so
repeated invocations with the same flags produce identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import akf as akf_mod
from . import architectures as arch_mod
from . import hpo, report, simulator
from .dataset import NormalizationConfig, make_windows, split
from .signals import TrainRun, load_runs, save_runs


class _Printer:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def say(self, message: str) -> None:
        if not self.quiet:
            print(message)

    def artifact(self, path: Path) -> None:
        print(str(path))


def _train_runs(runs: list[TrainRun]) -> list[TrainRun]:
    picked = [r for r in runs if r.role == "train"]
    if not picked:
        raise ValueError("no training runs in the data file")
    return picked


def _test_runs(runs: list[TrainRun]) -> list[TrainRun]:
    picked = [r for r in runs if r.role == "test"]
    if not picked:
        raise ValueError("no test runs in the data file")
    return picked


def cmd_simulate(args: argparse.Namespace, out: _Printer) -> int:
    if args.benchmark_suite:
        runs = simulator.make_benchmark_suite(args.seed)
    else:
        spec = simulator.load_scenario(args.scenario)
        runs = [simulator.simulate(spec)]
    save_runs(runs, args.out)
    n_wsp = sum(1 for r in runs if r.has_wsp)
    peak = max(
        max(max(s.wheel_speed, s.gps_speed, s.train_speed or 0.0) for s in r.samples)
        for r in runs
    )
    out.say(
        f"{len(runs)} runs ({len(runs) - n_wsp} without WSP, {n_wsp} with), "
        f"{sum(len(r) for r in runs)} samples, peak speed {peak:.4f} m/s"
    )
    for run in runs:
        out.say(f"  {run.run_id}: {len(run)} samples, role={run.role}, wsp={run.has_wsp}")
    out.artifact(Path(args.out))
    return 0


def _resolve_config(args: argparse.Namespace) -> arch_mod.ArchConfig:
    if args.optimal:
        return arch_mod.OPTIMAL_CONFIGS[args.arch]
    data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if "arch_config" in data:  # accept best_config.json from a search
        data = data["arch_config"]
    config = arch_mod.ArchConfig.from_dict(data)
    if config.arch != args.arch:
        raise ValueError(f"config is for {config.arch!r}, --arch says {args.arch!r}")
    return config


def cmd_train(args: argparse.Namespace, out: _Printer) -> int:
    runs = load_runs(args.data)
    config = _resolve_config(args)
    training = _train_runs(runs)
    norm = NormalizationConfig.from_runs(training)
    windows = make_windows(training, config.window, norm)
    parts = split(windows, ratio=0.8, seed=args.seed)
    out.say(
        f"{len(windows)} windows (n={config.window}) from {len(training)} runs; "
        f"train {len(parts.train)} / val {len(parts.val)}; peak {norm.peak_speed:.4f} m/s"
    )

    net = arch_mod.build(config, seed=args.seed)
    trainer = arch_mod.trainer_from_arch(
        config, epochs=args.epochs, seed=args.seed, optimizer=args.optimizer
    )
    try:
        model = arch_mod.train(net, parts, trainer, config=config)
    except arch_mod.TrainingDivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / f"model_{config.arch}.npz"
    arch_mod.save_model(model, checkpoint, norm)
    history = out_dir / "history.csv"
    arch_mod.save_history(model.history, history)
    if model.history:
        out.say(f"final val loss {model.history[-1][1]:.6f} after {model.epochs_trained} epochs")
    else:
        out.say("no epochs trained; checkpoint holds initial weights")
    out.artifact(checkpoint)
    out.artifact(history)
    return 0


def cmd_search(args: argparse.Namespace, out: _Printer) -> int:
    runs = load_runs(args.data)
    training = _train_runs(runs)
    norm = NormalizationConfig.from_runs(training)
    space = hpo.table1_space(args.arch)
    windows_by_n = {}

    def split_for(n: int):
        if n not in windows_by_n:
            windows_by_n[n] = split(make_windows(training, n, norm), 0.8, args.seed)
        return windows_by_n[n]

    study = hpo.run_study(
        arch=args.arch,
        space=space,
        budget=args.trials,
        epoch_budget=args.epoch_budget,
        split=split_for,
        seed=args.seed,
        optimizer=args.optimizer,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    study_path = out_dir / "study.jsonl"
    hpo.write_study_jsonl(study, study_path)
    best_path = out_dir / "best_config.json"
    hpo.write_best_config(study, args.arch, best_path)
    counts = {
        status: sum(1 for t in study.trials if t.status == status)
        for status in hpo.TRIAL_STATUS
    }
    out.say(
        f"{len(study.trials)} trials: {counts['completed']} completed, "
        f"{counts['pruned']} pruned, {counts['failed']} failed; "
        f"best val loss {study.best.best_val_loss:.6f} (trial {study.best.trial_id})"
    )
    out.artifact(study_path)
    out.artifact(best_path)
    return 0


def cmd_evaluate(args: argparse.Namespace, out: _Printer) -> int:
    runs = load_runs(args.data)
    tests = _test_runs(runs)
    requested = [e.strip() for e in args.estimators.split(",") if e.strip()]
    for estimator in requested:
        if estimator not in ("akf", "single2d", "single1d", "multibranch"):
            raise ValueError(f"unknown estimator {estimator!r}")

    models = {}
    for path in args.checkpoints or []:
        model, norm = arch_mod.load_model(path)
        models[model.config.arch] = (model, norm)
    for estimator in requested:
        if estimator != "akf" and estimator not in models:
            raise ValueError(f"estimator {estimator!r} requested but no checkpoint supplied")

    akf_config = (
        akf_mod.load_config(args.akf_config) if args.akf_config else akf_mod.AkfConfig()
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    traces_by_run = {}
    for run in tests:
        traces = [
            report.sensor_baseline(run, "wheel"),
            report.sensor_baseline(run, "gps"),
        ]
        for estimator in requested:
            if estimator == "akf":
                estimates = akf_mod.run_akf(run, akf_config)
                entries = tuple(
                    (s.t, float(v)) for s, v in zip(run.samples, estimates)
                )
                traces.append(
                    report.SpeedEstimateTrace(run_id=run.run_id, entries=entries, estimator="akf")
                )
            else:
                model, norm = models[estimator]
                traces.append(
                    arch_mod.predict_run(model, run, model.config.window, norm)
                )
        run_report = report.compare(traces, run)
        reports.append(run_report)
        traces_by_run[run.run_id] = traces
        for path in report.render_plots(run_report, run, out_dir, traces)[:2]:
            out.artifact(path)
        out.say(f"run {run.run_id} (wsp={run.has_wsp}):")
        for row in run_report.rows:
            out.say(
                f"  {row.estimator:<16} rmse {row.rmse:7.4f} m/s   "
                f"max |err| {row.max_abs_error:7.4f} m/s"
            )

    csv_path = out_dir / "report.csv"
    report.write_report_csv(reports, csv_path)
    json_path = out_dir / "report.json"
    report.write_report_json(reports, json_path, traces_by_run)
    out.artifact(csv_path)
    out.artifact(json_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="railspeed",
        description="Train-speed estimation toolkit: simulation, filtering, CNN regressors.",
    )
    parser.add_argument("--seed", type=int, default=42, help="root random seed")
    parser.add_argument("--out-dir", default=".", help="directory for output artifacts")
    parser.add_argument("--quiet", action="store_true", help="print only artifact paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate synthetic runs")
    source = p_sim.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario", help="scenario JSON file")
    source.add_argument("--benchmark-suite", action="store_true", help="17-run benchmark suite")
    p_sim.add_argument("--out", required=True, help="output CSV path")

    p_train = sub.add_parser("train", help="train one architecture")
    p_train.add_argument("--data", required=True, help="runs CSV")
    p_train.add_argument("--arch", required=True, choices=arch_mod.ARCH_NAMES)
    config_src = p_train.add_mutually_exclusive_group(required=True)
    config_src.add_argument("--config", help="architecture config JSON")
    config_src.add_argument("--optimal", action="store_true", help="use the searched optimum")
    p_train.add_argument("--epochs", type=int, default=40)
    p_train.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")

    p_search = sub.add_parser("search", help="hyperparameter study")
    p_search.add_argument("--data", required=True, help="runs CSV")
    p_search.add_argument("--arch", required=True, choices=arch_mod.ARCH_NAMES)
    p_search.add_argument("--trials", type=int, default=30)
    p_search.add_argument("--epoch-budget", type=int, default=15)
    p_search.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")

    p_eval = sub.add_parser("evaluate", help="score estimators on the test runs")
    p_eval.add_argument("--data", required=True, help="runs CSV")
    p_eval.add_argument("--estimators", default="akf", help="comma list: akf,single2d,single1d,multibranch")
    p_eval.add_argument("--checkpoints", nargs="*", help="model checkpoint files")
    p_eval.add_argument("--akf-config", help="filter config JSON")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "search": cmd_search,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = _Printer(args.quiet)
    try:
        return COMMANDS[args.command](args, out)
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
