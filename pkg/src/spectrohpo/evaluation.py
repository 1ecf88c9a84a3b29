"""Final evaluation, RMSE distributions and post-hoc analysis of trial logs."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .ensemble import EnsembleSpec, ensemble_predict, member_seed, train_pools
from .errors import ArgumentError, DivergenceError
from .hpo import TrialRecord, read_trial_log
from .metrics import Summary, rmse, summarize
from .nnet import HyperConfig, TrainSchedule
from .splits import SplitData, SplitSpec, split_dataset

log = logging.getLogger(__name__)

__all__ = [
    "EvalReport", "rmse", "summarize", "final_evaluation", "export_correlation", "find_lower_bound",
    "CorrelationRow", "LowerBound", "decile_test_means", "write_correlation_csv",
]

NOT_DEPLOYABLE = "not deployable: selected on test data"


@dataclass
class EvalReport:
    scenario: str
    config: HyperConfig
    rmse: list[float]
    ensemble_size: int
    summary: Summary
    n_diverged: int = 0

    @property
    def n_repeats(self) -> int:
        return len(self.rmse)

    @property
    def mean(self) -> float:
        return self.summary.mean

    @property
    def interval(self) -> tuple[float, float]:
        return self.summary.interval_low, self.summary.interval_high

    @property
    def quartiles(self) -> tuple[float, float, float]:
        return self.summary.quartiles

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config": self.config.to_dict(),
            "ensemble_size": self.ensemble_size,
            "n_repeats": self.n_repeats,
            "n_diverged": self.n_diverged,
            "rmse": self.rmse,
            "summary": self.summary.to_dict(),
        }

    def write(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        if csv_path is not None:
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(("repeat", "rmse"))
                writer.writerows((i, repr(r)) for i, r in enumerate(self.rmse))

    def boxplot_rows(self) -> list[tuple[str, str, float]]:
        s = self.summary
        return [(self.scenario, name, value) for name, value in (
            ("mean", s.mean), ("interval_low", s.interval_low), ("interval_high", s.interval_high),
            ("q1", s.q1), ("median", s.median), ("q3", s.q3),
            ("min", min(self.rmse)), ("max", max(self.rmse)))]


def write_boxplot_csv(reports: Sequence[EvalReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scenario", "statistic", "value"))
        for report in reports:
            writer.writerows((a, b, repr(float(c))) for a, b, c in report.boxplot_rows())


def _summary(values: list[float]) -> Summary:
    if len(values) >= 2:
        return summarize(values)
    v = values[0]
    return Summary(v, v, v, v, v, v)


def final_evaluation(config: HyperConfig, dataset: Dataset | SplitData, n_repeats: int, ensemble_size: int = 1,
                     seed: int = 0, schedule: TrainSchedule = TrainSchedule(), scenario: str = "",
                     split_seed: int = 0, test_season: str = "2018", workers: int = 1) -> EvalReport:
    """Test-set RMSE distribution of ``config`` retrained on the random split.

    Whatever split drove the search, models are retrained on the random
    (D_rand) partitioning. Repeat r trains an ensemble of ``ensemble_size``
    members with seed stream ``member_seed(seed, r)`` and scores the mean of
    their test predictions. Repeats whose members all diverge are excluded
    and counted.
    """
    if n_repeats < 1:
        raise ArgumentError("n_repeats must be >= 1")
    if isinstance(dataset, Dataset):
        data = split_dataset(dataset, SplitSpec("random", seed=split_seed, test_season=test_season))
    else:
        data = dataset
        if data.name != "D_rand":
            raise ArgumentError(f"final evaluation retrains on D_rand, got {data.name}")
    scores, n_diverged = [], 0
    for r in range(n_repeats):
        try:
            pool = train_pools(config, data, schedule, EnsembleSpec(ensemble_size, member_seed(seed, r)),
                               ("test",), workers)["test"]
        except DivergenceError:
            n_diverged += 1
            continue
        scores.append(rmse(ensemble_predict(pool), pool.truth))
    if not scores:
        raise DivergenceError(-1, f"all {n_repeats} evaluation repeats diverged")
    return EvalReport(scenario, config, scores, ensemble_size, _summary(scores), n_diverged)


# --------------------------------------------------------------------------
# Trial-log analysis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationRow:
    scenario: str
    trial_id: int
    val_rmse: float
    test_rmse: float
    diverged: bool


def _records(trial_log) -> list[TrialRecord]:
    if isinstance(trial_log, (str, Path)):
        return read_trial_log(trial_log)
    return list(trial_log)


def export_correlation(trial_log) -> list[CorrelationRow]:
    """One row per logged trial (path or records), diverged trials flagged."""
    return [CorrelationRow(r.scenario, r.trial_id, r.val_rmse, r.test_rmse, r.status != "ok")
            for r in sorted(_records(trial_log), key=lambda r: r.trial_id)]


def write_correlation_csv(rows: Sequence[CorrelationRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scenario", "trial_id", "val_rmse", "test_rmse", "diverged"))
        for r in rows:
            writer.writerow((r.scenario, r.trial_id, repr(r.val_rmse), repr(r.test_rmse), int(r.diverged)))


def decile_test_means(rows: Sequence[CorrelationRow], n_bins: int = 10) -> np.ndarray:
    """Mean test RMSE per validation-RMSE bin, best validation bin first.

    A rising first bin (bin 0 above bin 1) is the signature of selection
    overfitting: the configurations that fit validation best do worse on test.
    """
    ok = sorted((r for r in rows if not r.diverged), key=lambda r: (r.val_rmse, r.trial_id))
    if len(ok) < n_bins:
        raise ArgumentError(f"need at least {n_bins} completed trials")
    bins = np.array_split(np.array([r.test_rmse for r in ok]), n_bins)
    return np.array([b.mean() for b in bins])


@dataclass(frozen=True)
class LowerBound:
    config: HyperConfig
    test_rmse: float
    scenario: str
    trial_id: int
    note: str = field(default=NOT_DEPLOYABLE)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "test_rmse": self.test_rmse, "scenario": self.scenario,
                "trial_id": self.trial_id, "note": self.note}


def find_lower_bound(trial_logs: Sequence) -> LowerBound:
    """Configuration with the lowest *test* RMSE over all logs (ties: earliest trial)."""
    best = None
    for order, trial_log in enumerate(trial_logs):
        for r in _records(trial_log):
            if r.status != "ok" or not math.isfinite(r.test_rmse):
                continue
            key = (r.test_rmse, r.trial_id, order)
            if best is None or key < best[0]:
                best = (key, r)
    if best is None:
        raise ArgumentError("no completed trials")
    r = best[1]
    return LowerBound(r.config, r.test_rmse, r.scenario, r.trial_id)
