"""Ensembles over random initializations and the ensemble-size study."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, DivergenceError
from .metrics import rmse
from .nnet import HyperConfig, TrainSchedule, predict, train
from .splits import SplitData

log = logging.getLogger(__name__)


def member_seed(seed_stream: int, k: int) -> int:
    """Seed of the k-th member; independent of how many members exist."""
    return int(np.random.SeedSequence([int(seed_stream), int(k)]).generate_state(1)[0])


@dataclass(frozen=True)
class EnsembleSpec:
    size: int = 40
    seed_stream: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ArgumentError("ensemble size must be >= 1")

    def seeds(self) -> list[int]:
        return [member_seed(self.seed_stream, k) for k in range(self.size)]


@dataclass
class PredictionPool:
    """Member predictions (rows) over one evaluation set, in DM%."""

    predictions: np.ndarray
    seeds: tuple[int, ...]
    truth: np.ndarray
    config: HyperConfig | None = None
    eval_set: str = "test"
    diverged: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.predictions = np.atleast_2d(np.asarray(self.predictions, dtype=np.float64))
        self.truth = np.asarray(self.truth, dtype=np.float64)
        if self.predictions.shape[0] < 1 or self.predictions.shape[1] != self.truth.shape[0]:
            raise ArgumentError(f"pool shape {self.predictions.shape} incompatible with truth {self.truth.shape}")
        if len(self.seeds) != self.predictions.shape[0]:
            raise ArgumentError("one seed per member required")

    @property
    def size(self) -> int:
        return self.predictions.shape[0]

    def member_rmse(self) -> np.ndarray:
        return np.sqrt(np.mean((self.predictions - self.truth) ** 2, axis=1))

    def to_csv(self, path: str | Path) -> None:
        """``truth,m000,...`` columns plus a ``.json`` sidecar with seeds and config."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["truth"] + [f"m{k:03d}" for k in range(self.size)])
            for i, t in enumerate(self.truth):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in self.predictions[:, i]])
        meta = {"seeds": list(self.seeds), "eval_set": self.eval_set, "diverged": list(self.diverged),
                "config": self.config.to_dict() if self.config else None}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path: str | Path) -> "PredictionPool":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        config = HyperConfig.from_dict(meta["config"]) if meta.get("config") else None
        return cls(data[:, 1:].T, tuple(meta["seeds"]), data[:, 0], config, meta.get("eval_set", "test"),
                   tuple(meta.get("diverged", ())))


def _train_member(args) -> dict[str, np.ndarray] | None:
    config, data, schedule, seed, eval_sets = args
    try:
        weights, _ = train(config, (data.cal.x, data.cal.y), (data.val.x, data.val.y), schedule, seed)
    except DivergenceError as exc:
        log.warning("member with seed %d diverged: %s", seed, exc)
        return None
    return {name: predict(weights, data.part(name).x, data.stats) for name in eval_sets}


def train_pools(config: HyperConfig, data: SplitData, schedule: TrainSchedule, spec: EnsembleSpec,
                eval_sets: Sequence[str] = ("test",), workers: int = 1) -> dict[str, PredictionPool]:
    """Train ``spec.size`` members and collect their predictions on each eval set.

    Members are trained independently (optionally in worker processes) and
    gathered in seed order, so the result does not depend on ``workers``.
    Diverged members are dropped; if all diverge a DivergenceError is raised.
    """
    seeds = spec.seeds()
    jobs = [(config, data, schedule, s, tuple(eval_sets)) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_member, jobs))
    else:
        results = [_train_member(j) for j in jobs]
    kept = [(s, r) for s, r in zip(seeds, results) if r is not None]
    diverged = tuple(s for s, r in zip(seeds, results) if r is None)
    if not kept:
        raise DivergenceError(-1, f"all {len(seeds)} ensemble members diverged")
    return {
        name: PredictionPool(np.stack([r[name] for _, r in kept]), tuple(s for s, _ in kept),
                             data.part(name).dm, config, name, diverged)
        for name in eval_sets
    }


def train_ensemble(config: HyperConfig, data: SplitData, schedule: TrainSchedule, spec: EnsembleSpec,
                   eval_set: str = "test", workers: int = 1) -> PredictionPool:
    return train_pools(config, data, schedule, spec, (eval_set,), workers)[eval_set]


def ensemble_predict(pool: PredictionPool, members: Iterable[int] | None = None) -> np.ndarray:
    """Element-wise mean of the selected members' predictions (all if None)."""
    if members is None:
        return pool.predictions.mean(axis=0)
    idx = np.asarray(list(members), dtype=np.intp)
    if idx.size == 0:
        raise ArgumentError("ensemble needs at least one member")
    return pool.predictions[idx].mean(axis=0)


@dataclass(frozen=True)
class SizeDistribution:
    size: int
    subsets: tuple[tuple[int, ...], ...]
    rmse: np.ndarray


def _unique_subsets(m: int, n: int, count: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    if n == 1:
        return [(i,) for i in range(m)]
    if math.comb(m, n) <= count:
        return list(itertools.combinations(range(m), n))
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < count:
        key = tuple(sorted(int(i) for i in rng.choice(m, size=n, replace=False)))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out


def simulate_ensemble_sizes(pool: PredictionPool, sizes: Sequence[int], combos_per_size: int = 200,
                            seed: int = 0) -> dict[int, SizeDistribution]:
    """RMSE distribution of simulated ensembles drawn from a pre-trained pool.

    Size 1 enumerates every member; other sizes draw up to
    ``combos_per_size`` distinct member subsets (all of them when fewer exist).
    """
    for n in sizes:
        if not 1 <= n <= pool.size:
            raise ArgumentError(f"ensemble size {n} outside [1, {pool.size}]")
    out = {}
    for n in sizes:
        rng = np.random.default_rng([seed, n])
        subsets = _unique_subsets(pool.size, n, combos_per_size, rng)
        scores = np.array([rmse(ensemble_predict(pool, s), pool.truth) for s in subsets])
        out[n] = SizeDistribution(n, tuple(subsets), scores)
    return out


def write_size_study(results: dict[int, SizeDistribution], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("size", "combination", "rmse"))
        for n, dist in sorted(results.items()):
            for i, r in enumerate(dist.rmse):
                writer.writerow((n, i, repr(float(r))))
