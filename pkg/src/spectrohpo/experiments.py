"""Scenario presets and end-to-end desk-scale studies.

A scenario couples a validation-split strategy with singles (one network
per trial) or ensembles scoring. Running it means: search on that split,
then retrain the winner on the random split and score it on the test season.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dataset import Dataset, RawSample, generate_synthetic
from .evaluation import EvalReport, final_evaluation
from .hpo import HpoRun, TPEParams, TrialRecord, run_hpo
from .nnet import HyperConfig, TrainSchedule
from .splits import SplitSpec, split_dataset

log = logging.getLogger(__name__)

SPLIT_KINDS = ("rand", "shift", "season")
SCORING_KINDS = ("singles", "ensembles")
SCENARIOS = tuple(f"{s}-{m}" for s in SPLIT_KINDS for m in SCORING_KINDS)


def latest_season(samples: Sequence[RawSample], test_season: str) -> str:
    """Season of the chronologically latest non-test sample."""
    non_test = [s for s in samples if s.season != test_season]
    return max(non_test, key=lambda s: (s.date, s.id)).season


def scenario_split(name: str, samples: Sequence[RawSample], test_season: str = "2018",
                   split_seed: int = 0) -> SplitSpec:
    kind = name.split("-")[0]
    if kind == "rand":
        return SplitSpec("random", seed=split_seed, test_season=test_season)
    if kind == "shift":
        return SplitSpec("time_shift", test_season=test_season)
    if kind == "season":
        return SplitSpec("season", season_label=latest_season(samples, test_season), test_season=test_season)
    raise KeyError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


def scenario_ensemble_size(name: str, ensemble_size: int) -> int:
    return 1 if name.endswith("-singles") else ensemble_size


def desk_seasons(per_season: int = 400, n_seasons: int = 4, drift: float = 1.0, first_year: int = 2015
                 ) -> list[tuple[str, int, float]]:
    return [(str(first_year + k), per_season, drift * k) for k in range(n_seasons)]


def desk_dataset(seed: int, per_season: int = 400, n_seasons: int = 4, drift: float = 1.0,
                 noise_sd: float = 0.2) -> Dataset:
    return Dataset.from_samples(generate_synthetic(seed, desk_seasons(per_season, n_seasons, drift), noise_sd))


@dataclass
class ScenarioResult:
    scenario: str
    best: HyperConfig
    records: list[TrialRecord]
    report: EvalReport | None


def run_scenario(dataset: Dataset, scenario: str, trial_log: str | Path, budget: int = 60,
                 ensemble_size: int = 5, seed: int = 0, schedule: TrainSchedule | None = None,
                 eval_repeats: int = 5, eval_ensemble: int | None = None, tpe: TPEParams | None = None,
                 test_season: str | None = None, workers: int = 1) -> ScenarioResult:
    """HPO on the scenario's split followed by final evaluation on D_rand.

    ``eval_ensemble`` defaults to the scoring ensemble size of the scenario.
    Pass ``eval_repeats=0`` to skip the final evaluation.
    """
    schedule = schedule or TrainSchedule.desk()
    test_season = test_season or max(s.season for s in dataset.samples)
    m = scenario_ensemble_size(scenario, ensemble_size)
    tpe = tpe or TPEParams(n_startup=min(20, budget))
    run = HpoRun(scenario_split(scenario, dataset.samples, test_season), budget, m, tpe, seed, scenario)
    best, records = run_hpo(run, dataset, trial_log, schedule, workers=workers)
    report = None
    if eval_repeats > 0:
        report = final_evaluation(best, dataset, eval_repeats, eval_ensemble or m, seed=seed + 1,
                                  schedule=schedule, scenario=scenario, test_season=test_season,
                                  workers=workers)
    return ScenarioResult(scenario, best, records, report)


# --------------------------------------------------------------------------
# Multi-repetition studies
# --------------------------------------------------------------------------

@dataclass
class PairedOutcome:
    """Final test RMSE of two scenarios run on the same dataset and seed."""

    repetition: int
    seed: int
    results: dict[str, ScenarioResult]

    def final_rmse(self, scenario: str) -> float:
        return self.results[scenario].report.mean


def extrapolation_study(out_dir: str | Path, seeds: Sequence[int] = range(5), budget: int = 60,
                        ensemble_size: int = 5, per_season: int = 400, drift: float = 1.0,
                        eval_repeats: int = 5, schedule: TrainSchedule | None = None,
                        scenarios: Sequence[str] = ("rand-ensembles", "shift-ensembles"),
                        workers: int = 1) -> list[PairedOutcome]:
    """Run each scenario once per seed on a freshly generated drift dataset.

    Repetition ``k`` uses ``seeds[k]`` both for the data and for the search,
    so scenarios are paired. Trial logs go to ``out_dir`` and are resumed if
    present.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = []
    for k, seed in enumerate(seeds):
        dataset = desk_dataset(seed, per_season, drift=drift)
        results = {}
        for scenario in scenarios:
            log.info("repetition %d (seed %d): %s", k, seed, scenario)
            results[scenario] = run_scenario(dataset, scenario, out_dir / f"seed{seed}_{scenario}.jsonl",
                                             budget, ensemble_size, seed, schedule, eval_repeats,
                                             workers=workers)
        outcomes.append(PairedOutcome(k, seed, results))
    return outcomes


@dataclass
class SearchComparison:
    seed: int
    tpe_best: float
    random_best: float
    # calibration DM std, to express RMSE gaps in standardized units
    target_std: float

    @property
    def gap(self) -> float:
        return self.tpe_best - self.random_best

    @property
    def standardized_gap(self) -> float:
        return self.gap / self.target_std


def tpe_vs_random(out_dir: str | Path, seeds: Sequence[int] = range(10), budget: int = 60, n_startup: int = 20,
                  per_season: int = 400, drift: float = 1.0, schedule: TrainSchedule | None = None,
                  split: str = "time_shift", workers: int = 1) -> list[SearchComparison]:
    """Best validation RMSE of TPE against pure random search, paired by seed.

    Random search is the same run with every trial drawn uniformly. The two
    share their first ``n_startup`` trials (same configs, same training
    seeds), so those are copied from the TPE log instead of being retrained.
    """
    schedule = schedule or TrainSchedule.desk()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out = []
    for seed in seeds:
        dataset = desk_dataset(seed, per_season, drift=drift)
        test_season = max(s.season for s in dataset.samples)
        spec = SplitSpec(split, seed=seed, test_season=test_season)
        data = split_dataset(dataset, spec)
        tpe_log = out_dir / f"seed{seed}_tpe.jsonl"
        random_log = out_dir / f"seed{seed}_random.jsonl"
        _, tpe_records = run_hpo(HpoRun(spec, budget, 1, TPEParams(n_startup=n_startup), seed), data,
                                 tpe_log, schedule, workers=workers)
        if not random_log.exists():
            shared = tpe_log.read_text().splitlines(keepends=True)[:n_startup]
            random_log.write_text("".join(shared))
        _, random_records = run_hpo(HpoRun(spec, budget, 1, TPEParams(n_startup=budget), seed), data,
                                    random_log, schedule, workers=workers)
        out.append(SearchComparison(seed, min(r.val_rmse for r in tpe_records),
                                    min(r.val_rmse for r in random_records), data.stats.target_std))
    return out
