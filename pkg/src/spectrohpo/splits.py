"""Calibration/validation partitioning of the non-test seasons.

The test season is always held out whole. The remaining samples are split
by one of three strategies: a seeded random subset, the chronologically
latest fraction, or one whole season.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .dataset import Dataset, RawSample, StandardizeStats, standardize
from .errors import ArgumentError, DegenerateSplitError

CAL, VAL, TEST = "calibration", "validation", "test"
LABELS = (CAL, VAL, TEST)
STRATEGY_NAMES = {"random": "D_rand", "time_shift": "D_shift", "season": "D_season"}

Strategy = Literal["random", "time_shift", "season"]


@dataclass(frozen=True)
class SplitSpec:
    strategy: Strategy = "random"
    fraction: float = 1 / 3
    season_label: str | None = None
    seed: int = 0
    test_season: str = "2018"
    # exact validation-set size; overrides ``fraction`` when set
    n_validation: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGY_NAMES:
            raise ArgumentError(f"unknown split strategy {self.strategy!r}")
        if not 0 < self.fraction < 1:
            raise ArgumentError("fraction must lie in (0, 1)")
        if self.strategy == "season" and not self.season_label:
            raise ArgumentError("season strategy needs season_label")
        if self.n_validation is not None and self.n_validation < 1:
            raise ArgumentError("n_validation must be positive")

    @property
    def name(self) -> str:
        if self.strategy == "season":
            return f"D_{self.season_label}"
        return STRATEGY_NAMES[self.strategy]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(**d)


@dataclass(frozen=True)
class SplitAssignment:
    ids: tuple[str, ...]
    labels: tuple[str, ...]
    name: str
    spec: SplitSpec

    def indices(self, label: str) -> np.ndarray:
        return np.array([i for i, lab in enumerate(self.labels) if lab == label], dtype=np.intp)

    def counts(self) -> dict[str, int]:
        return {lab: self.labels.count(lab) for lab in LABELS}

    def to_csv(self, path: str | Path) -> None:
        """Write ``id,label`` rows plus a ``.json`` sidecar holding the spec."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("id", "label"))
            writer.writerows(zip(self.ids, self.labels))
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({"name": self.name, "spec": self.spec.to_dict(),
                                       "counts": self.counts()}, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path: str | Path) -> "SplitAssignment":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tuple(r["id"] for r in rows), tuple(r["label"] for r in rows),
                   meta["name"], SplitSpec.from_dict(meta["spec"]))


def make_split(samples: Sequence[RawSample], spec: SplitSpec) -> SplitAssignment:
    labels = [TEST if s.season == spec.test_season else CAL for s in samples]
    pool = [i for i, lab in enumerate(labels) if lab == CAL]
    n = len(pool)
    if n < 2:
        raise DegenerateSplitError(f"need at least 2 non-test samples, got {n}")

    if spec.strategy == "random":
        n_val = spec.n_validation if spec.n_validation is not None else math.floor(spec.fraction * n)
        rng = np.random.default_rng(spec.seed)
        chosen = rng.choice(n, size=min(n_val, n), replace=False)
        val = [pool[i] for i in chosen]
    elif spec.strategy == "time_shift":
        n_val = spec.n_validation if spec.n_validation is not None else math.ceil(spec.fraction * n)
        ordered = sorted(pool, key=lambda i: (samples[i].date, samples[i].id))
        val = ordered[n - n_val:] if n_val > 0 else []
    else:
        if spec.season_label == spec.test_season:
            raise ArgumentError("validation season must differ from the test season")
        val = [i for i in pool if samples[i].season == spec.season_label]
        if not val:
            raise ArgumentError(f"season {spec.season_label!r} not present among non-test samples")

    for i in val:
        labels[i] = VAL
    if len(val) == 0 or len(val) == n:
        raise DegenerateSplitError(f"{spec.name}: calibration={n - len(val)}, validation={len(val)}")
    return SplitAssignment(tuple(s.id for s in samples), tuple(labels), spec.name, spec)


@dataclass(frozen=True)
class Part:
    """Standardized features and targets of one partition, plus raw DM%."""

    x: np.ndarray
    y: np.ndarray
    dm: np.ndarray
    ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.dm)


@dataclass(frozen=True)
class SplitData:
    """A dataset partitioned and standardized with calibration statistics."""

    name: str
    cal: Part
    val: Part
    test: Part
    stats: StandardizeStats

    def part(self, which: str) -> Part:
        return {"cal": self.cal, "val": self.val, "test": self.test}[which]


def prepare_split(dataset: Dataset, assignment: SplitAssignment) -> SplitData:
    """Standardize features/targets with stats fitted on the calibration rows only."""
    if assignment.ids != dataset.features.ids:
        raise ArgumentError("assignment ids do not match dataset order")
    targets = dataset.targets
    idx = {lab: assignment.indices(lab) for lab in LABELS}
    cal_x, cal_y, stats = standardize(dataset.features.take(idx[CAL]), targets[idx[CAL]])

    def part(i: np.ndarray) -> Part:
        fm_std, y, _ = standardize(dataset.features.take(i), targets[i], stats)
        return Part(fm_std.values, y, targets[i], fm_std.ids)

    cal = Part(cal_x.values, cal_y, targets[idx[CAL]], cal_x.ids)
    return SplitData(assignment.name, cal, part(idx[VAL]), part(idx[TEST]), stats)


def split_dataset(dataset: Dataset, spec: SplitSpec) -> SplitData:
    return prepare_split(dataset, make_split(dataset.samples, spec))
