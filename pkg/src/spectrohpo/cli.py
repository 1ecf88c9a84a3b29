"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence-only failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import SCHEDULES, RunConfig, write_provenance
from .dataset import Dataset, load_dataset, write_dataset, generate_synthetic
from .ensemble import simulate_ensemble_sizes, train_ensemble, EnsembleSpec, write_size_study
from .errors import ArgumentError, DataError, DivergenceError
from .evaluation import (export_correlation, final_evaluation, find_lower_bound, write_boxplot_csv,
                         write_correlation_csv)
from .experiments import SCENARIOS, desk_seasons, scenario_ensemble_size, scenario_split
from .hpo import HpoRun, TPEParams, run_hpo
from .metrics import rmse
from .nnet import CNN_B, HyperConfig, predict, save_record, save_weights, train
from .splits import SplitSpec, make_split, prepare_split

log = logging.getLogger("spectrohpo")

OUT_ENV = "SPECTROHPO_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=os.environ.get(OUT_ENV, "runs"),
                   help=f"output directory (default ${OUT_ENV} or ./runs)")
    p.add_argument("--run-config", help="JSON RunConfig; explicit flags override it")
    p.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    p.add_argument("--workers", type=int, default=1, help="parallel trainings (1 = fully deterministic)")
    p.add_argument("--log-level", default="WARNING")


def _data_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="canonical CSV (default <out>/dataset.csv)")


def _split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split", choices=("random", "time_shift", "season"), default=None)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--season", dest="season_label", default=None, help="validation season (season split)")
    p.add_argument("--test-season", default=None)
    p.add_argument("--n-validation", type=int, default=None, help="exact validation size (overrides fraction)")
    p.add_argument("--split-seed", type=int, default=None)


def _schedule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", choices=sorted(SCHEDULES), default=None,
                   help="full: 750 epochs/patience 25,50; desk: shortened")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)


def _config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="HyperConfig JSON (default: the CNN_B baseline)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectrohpo", description="Extrapolation-aware HPO for 1D-CNN spectral regression")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic seasonal-drift dataset")
    _common(p)
    p.add_argument("--seasons", type=int, default=4)
    p.add_argument("--per-season", type=int, default=400)
    p.add_argument("--drift", type=float, default=1.0, help="peak shift (bands) per season")
    p.add_argument("--noise", type=float, default=0.2, help="DM noise sd")
    p.add_argument("--first-year", type=int, default=2015)

    p = sub.add_parser("preprocess", help="write the 618-column feature matrix")
    _common(p)
    _data_flag(p)

    p = sub.add_parser("split", help="write a calibration/validation/test assignment")
    _common(p)
    _data_flag(p)
    _split_flags(p)

    p = sub.add_parser("train", help="train one network and report val/test RMSE")
    _common(p)
    _data_flag(p)
    _split_flags(p)
    _schedule_flags(p)
    _config_flag(p)

    p = sub.add_parser("hpo", help="run or resume a TPE search")
    _common(p)
    _data_flag(p)
    _split_flags(p)
    _schedule_flags(p)
    p.add_argument("--scenario", choices=SCENARIOS, default=None, help="preset split x scoring")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--ensemble", type=int, default=None, help="members per trial")
    p.add_argument("--startup", type=int, default=None, help="uniform startup trials")
    p.add_argument("--candidates", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--trial-log", default=None)

    p = sub.add_parser("ensemble-study", help="pool of re-trainings and simulated ensemble sizes")
    _common(p)
    _data_flag(p)
    _schedule_flags(p)
    _config_flag(p)
    p.add_argument("--pool-size", type=int, default=200)
    p.add_argument("--sizes", default="1,2,5,10,25,40")
    p.add_argument("--combos", type=int, default=200)
    p.add_argument("--test-season", default=None)

    p = sub.add_parser("evaluate", help="final evaluation on the random split")
    _common(p)
    _data_flag(p)
    _schedule_flags(p)
    _config_flag(p)
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--ensemble", type=int, default=1)
    p.add_argument("--scenario", default="")
    p.add_argument("--test-season", default=None)

    p = sub.add_parser("correlate", help="validation-vs-test table and lower bound from trial logs")
    _common(p)
    p.add_argument("--trial-log", action="append", required=True)
    return parser


def _run_config(args) -> RunConfig:
    run = RunConfig.from_file(args.run_config) if args.run_config else RunConfig()
    run.command = args.command
    if args.seed is not None:
        run.seed = args.seed
    run.out_dir = args.out
    if getattr(args, "data", None):
        run.data = args.data
    split = dict(run.split)
    for key in ("fraction", "season_label", "test_season", "n_validation"):
        if getattr(args, key, None) is not None:
            split[key] = getattr(args, key)
    if getattr(args, "split", None):
        split["strategy"] = args.split
    if getattr(args, "split_seed", None) is not None:
        split["seed"] = args.split_seed
    run.split = split
    if getattr(args, "schedule", None):
        run.schedule = args.schedule
    overrides = dict(run.schedule_overrides)
    if getattr(args, "max_epochs", None) is not None:
        overrides["max_epochs"] = args.max_epochs
    if getattr(args, "batch_size", None) is not None:
        overrides["batch_size"] = args.batch_size
    run.schedule_overrides = overrides
    return run


def _dataset_path(run: RunConfig) -> Path:
    return Path(run.data) if run.data else Path(run.out_dir) / "dataset.csv"


def _load_config(path: str | None) -> HyperConfig:
    if not path:
        return CNN_B
    doc = json.loads(Path(path).read_text())
    return HyperConfig.from_dict(doc.get("config", doc))


def _write_json(path: Path, obj, run: RunConfig) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))
    write_provenance(path, run)


def _default_test_season(dataset: Dataset) -> str:
    return max(s.season for s in dataset.samples)


def cmd_synth(args, run: RunConfig, out: Path) -> str:
    seasons = desk_seasons(args.per_season, args.seasons, args.drift, args.first_year)
    run.synthetic = {"seasons": seasons, "noise_sd": args.noise}
    samples = generate_synthetic(run.seed, seasons, args.noise)
    path = out / "dataset.csv"
    write_dataset(samples, path)
    write_provenance(path, run)
    return f"synth samples={len(samples)} seasons={args.seasons} -> {path}"


def cmd_preprocess(args, run: RunConfig, out: Path) -> str:
    dataset = Dataset.from_samples(load_dataset(_dataset_path(run)))
    path = out / "features.csv"
    dataset.features.to_csv(path)
    write_provenance(path, run)
    return f"preprocess rows={dataset.features.rows} columns={len(dataset.features.column_names)} -> {path}"


def _split_spec(run: RunConfig, dataset: Dataset) -> SplitSpec:
    split = dict(run.split)
    split.setdefault("test_season", _default_test_season(dataset))
    return SplitSpec(**split)


def cmd_split(args, run: RunConfig, out: Path) -> str:
    dataset = Dataset.from_samples(load_dataset(_dataset_path(run)))
    assignment = make_split(dataset.samples, _split_spec(run, dataset))
    path = out / f"split_{assignment.name}.csv"
    assignment.to_csv(path)
    write_provenance(path, run)
    c = assignment.counts()
    return f"split {assignment.name} cal={c['calibration']} val={c['validation']} test={c['test']}"


def cmd_train(args, run: RunConfig, out: Path) -> str:
    dataset = Dataset.from_samples(load_dataset(_dataset_path(run)))
    data = prepare_split(dataset, make_split(dataset.samples, _split_spec(run, dataset)))
    config = _load_config(args.config)
    weights, record = train(config, (data.cal.x, data.cal.y), (data.val.x, data.val.y),
                            run.train_schedule(), run.seed)
    val = rmse(predict(weights, data.val.x, data.stats), data.val.dm)
    test = rmse(predict(weights, data.test.x, data.stats), data.test.dm)
    save_weights(weights, out / "weights.json", config)
    write_provenance(out / "weights.json", run)
    save_record(record, out / "train_record.json")
    write_provenance(out / "train_record.json", run)
    return f"train {data.name} val_rmse={val:.4f} test_rmse={test:.4f} epochs={record.epochs_run}"


def cmd_hpo(args, run: RunConfig, out: Path) -> str:
    dataset = Dataset.from_samples(load_dataset(_dataset_path(run)))
    test_season = run.split.get("test_season") or _default_test_season(dataset)
    hp = dict(run.hpo)
    for key, flag in (("budget", "budget"), ("ensemble_size", "ensemble")):
        if getattr(args, flag) is not None:
            hp[key] = getattr(args, flag)
    tpe = dict(hp.get("tpe", {}))
    for key, flag in (("n_startup", "startup"), ("n_candidates", "candidates"), ("gamma", "gamma")):
        if getattr(args, flag) is not None:
            tpe[key] = getattr(args, flag)
    budget = hp.get("budget", 60)
    tpe.setdefault("n_startup", min(20, budget))
    scenario = args.scenario or hp.get("scenario", "")
    if scenario:
        split = scenario_split(scenario, dataset.samples, test_season, run.split.get("seed", 0))
        ensemble_size = scenario_ensemble_size(scenario, hp.get("ensemble_size", 40))
    else:
        split = _split_spec(run, dataset)
        ensemble_size = hp.get("ensemble_size", 1)
    hpo_run = HpoRun(split, budget, ensemble_size, TPEParams(**tpe), run.seed, scenario)
    run.hpo = hpo_run.to_dict()
    name = scenario or split.name
    _write_json(out / f"hpo_run_{name}.json", run.hpo, run)
    trial_log = Path(args.trial_log) if args.trial_log else out / f"trials_{name}.jsonl"
    best, records = run_hpo(hpo_run, dataset, trial_log, run.train_schedule(), workers=args.workers)
    write_provenance(trial_log, run)
    if all(r.status != "ok" for r in records):
        raise DivergenceError(-1, "every trial diverged")
    best_rec = min(records, key=lambda r: (r.val_rmse, r.trial_id))
    _write_json(out / f"best_{name}.json", {"config": best.to_dict(), "trial_id": best_rec.trial_id,
                                            "val_rmse": best_rec.val_rmse}, run)
    return f"hpo {name} trials={len(records)} best_val_rmse={best_rec.val_rmse:.4f}"


def cmd_ensemble_study(args, run: RunConfig, out: Path) -> str:
    dataset = Dataset.from_samples(load_dataset(_dataset_path(run)))
    test_season = args.test_season or _default_test_season(dataset)
    data = prepare_split(dataset, make_split(dataset.samples, SplitSpec("random", test_season=test_season)))
    config = _load_config(args.config)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    run.ensemble_sizes = sizes
    pool = train_ensemble(config, data, run.train_schedule(), EnsembleSpec(args.pool_size, run.seed),
                          "test", args.workers)
    pool.to_csv(out / "pool.csv")
    write_provenance(out / "pool.csv", run)
    sizes = [n for n in sizes if n <= pool.size]
    study = simulate_ensemble_sizes(pool, sizes, args.combos, run.seed)
    write_size_study(study, out / "ensemble_sizes.csv")
    write_provenance(out / "ensemble_sizes.csv", run)
    medians = " ".join(f"N{n}={float(np.median(d.rmse)):.4f}" for n, d in study.items())
    return f"ensemble-study pool={pool.size} median_rmse {medians}"


def cmd_evaluate(args, run: RunConfig, out: Path) -> str:
    dataset = Dataset.from_samples(load_dataset(_dataset_path(run)))
    test_season = args.test_season or _default_test_season(dataset)
    config = _load_config(args.config)
    run.ensemble_sizes = [args.ensemble]
    report = final_evaluation(config, dataset, args.repeats, args.ensemble, seed=run.seed,
                              schedule=run.train_schedule(), scenario=args.scenario, test_season=test_season,
                              workers=args.workers)
    stem = f"eval_{args.scenario}" if args.scenario else "eval"
    report.write(out / f"{stem}.json", out / f"{stem}_rmse.csv")
    write_boxplot_csv([report], out / f"{stem}_boxplot.csv")
    for name in (f"{stem}.json", f"{stem}_rmse.csv", f"{stem}_boxplot.csv"):
        write_provenance(out / name, run)
    lo, hi = report.interval
    return (f"evaluate {args.scenario or 'config'} repeats={report.n_repeats} mean_rmse={report.mean:.4f} "
            f"interval=[{lo:.4f}, {hi:.4f}]")


def cmd_correlate(args, run: RunConfig, out: Path) -> str:
    rows = []
    for path in args.trial_log:
        rows.extend(export_correlation(path))
    write_correlation_csv(rows, out / "correlation.csv")
    write_provenance(out / "correlation.csv", run)
    if not any(not r.diverged for r in rows):
        return f"correlate rows={len(rows)} (no completed trials)"
    bound = find_lower_bound(args.trial_log)
    _write_json(out / "lower_bound.json", bound.to_dict(), run)
    return f"correlate rows={len(rows)} lower_bound_test_rmse={bound.test_rmse:.4f} ({bound.note})"


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "split": cmd_split, "train": cmd_train,
    "hpo": cmd_hpo, "ensemble-study": cmd_ensemble_study, "evaluate": cmd_evaluate, "correlate": cmd_correlate,
}


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = _run_config(args)
        out = Path(run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, run, out)
    except (ArgumentError, KeyError, TypeError) as exc:
        print(f"spectrohpo {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"spectrohpo {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"spectrohpo {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(summary)
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())
