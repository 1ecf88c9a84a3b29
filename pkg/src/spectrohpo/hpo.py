"""Bayesian hyperparameter search with a Tree-structured Parzen Estimator.

Each trial trains one network (or an ensemble) per suggested configuration
on the calibration set and is scored by validation RMSE. Test RMSE is
logged for post-hoc analysis but never reaches the sampler: the sampler
only ever receives :class:`Observation` pairs.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from .dataset import Dataset
from .ensemble import EnsembleSpec, PredictionPool, ensemble_predict, train_pools
from .errors import ArgumentError, DivergenceError, TrialLogError
from .metrics import rmse
from .nnet import (FC_UNITS_RANGE, FC_UNITS_STEP, KERNEL_WIDTHS, L2_RANGE, N_FC_LAYERS_RANGE,
                   N_KERNELS_RANGE, HyperConfig, TrainSchedule)
from .splits import SplitData, SplitSpec, split_dataset

log = logging.getLogger(__name__)

LOG_SCHEMA = 1


@dataclass(frozen=True)
class SearchSpace:
    l2: tuple[float, float] = L2_RANGE
    n_kernels: tuple[int, int] = N_KERNELS_RANGE
    kernel_widths: tuple[int, ...] = KERNEL_WIDTHS
    n_fc_layers: tuple[int, int] = N_FC_LAYERS_RANGE
    fc_units: tuple[int, int] = FC_UNITS_RANGE
    fc_step: int = FC_UNITS_STEP

    def sample(self, rng: np.random.Generator) -> HyperConfig:
        """Uniform draw (log-uniform for the L2 coefficient)."""
        lo, hi = math.log(self.l2[0]), math.log(self.l2[1])
        return HyperConfig(
            l2=float(math.exp(rng.uniform(lo, hi))),
            n_kernels=int(rng.integers(self.n_kernels[0], self.n_kernels[1] + 1)),
            kernel_width=int(self.kernel_widths[rng.integers(len(self.kernel_widths))]),
            n_fc_layers=int(rng.integers(self.n_fc_layers[0], self.n_fc_layers[1] + 1)),
            fc_units=int(self.fc_step * rng.integers(self.fc_units[0] // self.fc_step,
                                                    self.fc_units[1] // self.fc_step + 1)),
        )


class Observation(NamedTuple):
    """What the sampler may see of a finished trial."""

    config: HyperConfig
    val_rmse: float


@dataclass(frozen=True)
class TPEParams:
    gamma: float = 0.25
    n_startup: int = 20
    n_candidates: int = 24
    prior_weight: float = 1.0


# --------------------------------------------------------------------------
# Parzen estimators
# --------------------------------------------------------------------------

class _NumericParzen:
    """Truncated Gaussian mixture on [low, high]; ``step`` > 0 makes it integer-valued."""

    def __init__(self, obs: np.ndarray, low: float, high: float, integer: bool, prior_weight: float):
        self.integer = integer
        self.low, self.high = (low - 0.5, high + 0.5) if integer else (low, high)
        self.vmin, self.vmax = low, high
        span = self.high - self.low
        prior_mu = 0.5 * (self.low + self.high)
        mus = np.append(np.asarray(obs, dtype=np.float64), prior_mu)
        weights = np.append(np.ones(len(obs)), prior_weight)
        order = np.argsort(mus, kind="stable")
        srt = mus[order]
        # bandwidth: distance to the farther neighbour, clipped to [span/min(100, n+1), span]
        padded = np.concatenate(([self.low], srt, [self.high]))
        sig = np.maximum(padded[1:-1] - padded[:-2], padded[2:] - padded[1:-1])
        sig = np.clip(sig, span / min(100.0, len(mus) + 1.0), span)
        sigmas = np.empty_like(sig)
        sigmas[order] = sig
        sigmas[-1] = span
        self.mus, self.sigmas = mus, sigmas
        self.weights = weights / weights.sum()
        self.mass = ndtr((self.high - mus) / sigmas) - ndtr((self.low - mus) / sigmas)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty(n)
        for i in range(n):
            c = rng.choice(len(self.mus), p=self.weights)
            while True:
                v = rng.normal(self.mus[c], self.sigmas[c])
                if self.low <= v <= self.high:
                    break
            out[i] = v
        if self.integer:
            out = np.clip(np.rint(out), self.vmin, self.vmax)
        return out

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[:, None]
        if self.integer:
            upper = ndtr((np.minimum(x + 0.5, self.high) - self.mus) / self.sigmas)
            lower = ndtr((np.maximum(x - 0.5, self.low) - self.mus) / self.sigmas)
            comp = np.log(np.maximum(upper - lower, 1e-300))
        else:
            z = (x - self.mus) / self.sigmas
            comp = -0.5 * z * z - np.log(self.sigmas * math.sqrt(2 * math.pi))
        comp = comp - np.log(self.mass) + np.log(self.weights)
        top = comp.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(comp - top).sum(axis=1, keepdims=True)))[:, 0]


class _CategoricalParzen:
    def __init__(self, obs: np.ndarray, n_choices: int, prior_weight: float):
        counts = np.bincount(np.asarray(obs, dtype=np.intp), minlength=n_choices).astype(np.float64)
        p = counts + prior_weight
        self.p = p / p.sum()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(len(self.p), size=n, p=self.p)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        return np.log(self.p[np.asarray(x, dtype=np.intp)])


def _encode(config: HyperConfig, space: SearchSpace) -> dict[str, float]:
    return {
        "l2": math.log(config.l2),
        "n_kernels": config.n_kernels,
        "kernel_width": space.kernel_widths.index(config.kernel_width),
        "n_fc_layers": config.n_fc_layers,
        "fc_units": config.fc_units // space.fc_step,
    }


def _estimators(obs: list[dict[str, float]], space: SearchSpace, prior_weight: float) -> dict:
    col = {k: np.array([o[k] for o in obs], dtype=np.float64) for k in
           ("l2", "n_kernels", "kernel_width", "n_fc_layers", "fc_units")}
    return {
        "l2": _NumericParzen(col["l2"], math.log(space.l2[0]), math.log(space.l2[1]), False, prior_weight),
        "n_kernels": _NumericParzen(col["n_kernels"], *space.n_kernels, True, prior_weight),
        "kernel_width": _CategoricalParzen(col["kernel_width"], len(space.kernel_widths), prior_weight),
        "n_fc_layers": _NumericParzen(col["n_fc_layers"], *space.n_fc_layers, True, prior_weight),
        "fc_units": _NumericParzen(col["fc_units"], space.fc_units[0] // space.fc_step,
                                   space.fc_units[1] // space.fc_step, True, prior_weight),
    }


def tpe_suggest(history: Sequence[Observation], space: SearchSpace = SearchSpace(),
                params: TPEParams = TPEParams(), seed: int = 0) -> HyperConfig:
    """Next configuration to try given finished (config, validation RMSE) pairs.

    Below ``params.n_startup`` observations this is a uniform draw. Otherwise
    the finite observations are split at the ``gamma`` quantile into good and
    bad sets, independent per-dimension Parzen densities l (good) and g (bad)
    are fitted, ``n_candidates`` points are drawn from l, and the one with the
    largest l/g ratio is returned.
    """
    rng = np.random.default_rng(seed)
    if len(history) < params.n_startup:
        return space.sample(rng)
    finite = [o for o in history if math.isfinite(o.val_rmse)]
    if not finite:
        return space.sample(rng)
    order = sorted(range(len(finite)), key=lambda i: finite[i].val_rmse)
    n_good = max(1, math.ceil(params.gamma * len(finite)))
    good = [_encode(finite[i].config, space) for i in order[:n_good]]
    bad = [_encode(finite[i].config, space) for i in order[n_good:]]
    below = _estimators(good, space, params.prior_weight)
    above = _estimators(bad, space, params.prior_weight)

    candidates = {name: est.sample(rng, params.n_candidates) for name, est in below.items()}
    score = np.zeros(params.n_candidates)
    for name, est in below.items():
        score += est.log_pdf(candidates[name]) - above[name].log_pdf(candidates[name])
    best = int(np.argmax(score))
    return HyperConfig(
        l2=float(np.clip(math.exp(candidates["l2"][best]), *space.l2)),
        n_kernels=int(candidates["n_kernels"][best]),
        kernel_width=int(space.kernel_widths[int(candidates["kernel_width"][best])]),
        n_fc_layers=int(candidates["n_fc_layers"][best]),
        fc_units=int(candidates["fc_units"][best]) * space.fc_step,
    )


# --------------------------------------------------------------------------
# Scoring and trial records
# --------------------------------------------------------------------------

@dataclass
class Score:
    val_rmse: float
    test_rmse: float
    status: str
    member_seeds: tuple[int, ...]
    pools: dict[str, PredictionPool] = field(default_factory=dict, repr=False)


def score_config(config: HyperConfig, data: SplitData, schedule: TrainSchedule, ensemble_size: int = 1,
                 seed: int = 0, workers: int = 1) -> Score:
    """Train ``ensemble_size`` members; RMSE of their averaged val/test predictions.

    If every member diverges the status is ``diverged`` and both RMSEs are +inf.
    """
    if ensemble_size < 1:
        raise ArgumentError("ensemble_size must be >= 1")
    spec = EnsembleSpec(ensemble_size, seed)
    try:
        pools = train_pools(config, data, schedule, spec, ("val", "test"), workers)
    except DivergenceError:
        return Score(math.inf, math.inf, "diverged", tuple(spec.seeds()))
    val = rmse(ensemble_predict(pools["val"]), pools["val"].truth)
    test = rmse(ensemble_predict(pools["test"]), pools["test"].truth)
    return Score(val, test, "ok", pools["val"].seeds, pools)


@dataclass
class TrialRecord:
    trial_id: int
    config: HyperConfig
    ensemble_size: int
    member_seeds: tuple[int, ...]
    val_rmse: float
    test_rmse: float
    status: str = "ok"
    scenario: str = ""
    wall_time: float = 0.0

    def observation(self) -> Observation:
        return Observation(self.config, self.val_rmse)

    def to_json(self) -> str:
        # wall time is excluded so the log stays byte-reproducible
        return json.dumps({
            "schema": LOG_SCHEMA,
            "trial_id": self.trial_id,
            "scenario": self.scenario,
            "config": self.config.to_dict(),
            "ensemble_size": self.ensemble_size,
            "member_seeds": list(self.member_seeds),
            "val_rmse": self.val_rmse if math.isfinite(self.val_rmse) else None,
            "test_rmse": self.test_rmse if math.isfinite(self.test_rmse) else None,
            "status": self.status,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        if d.get("schema") != LOG_SCHEMA:
            raise ValueError(f"unsupported schema {d.get('schema')!r}")
        if d["status"] not in ("ok", "diverged"):
            raise ValueError(f"unknown status {d['status']!r}")
        return cls(int(d["trial_id"]), HyperConfig.from_dict(d["config"]), int(d["ensemble_size"]),
                   tuple(int(s) for s in d["member_seeds"]),
                   math.inf if d["val_rmse"] is None else float(d["val_rmse"]),
                   math.inf if d["test_rmse"] is None else float(d["test_rmse"]),
                   d["status"], d.get("scenario", ""))


def read_trial_log(path: str | Path) -> list[TrialRecord]:
    """Parse a JSON-lines trial log; any bad line halts with its line number."""
    records = []
    seen = set()
    path = Path(path)
    if not path.exists():
        return records
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = TrialRecord.from_json(line)
            except (ValueError, KeyError, TypeError) as exc:
                raise TrialLogError(lineno, str(exc)) from None
            if rec.trial_id in seen:
                raise TrialLogError(lineno, f"duplicate trial id {rec.trial_id}")
            seen.add(rec.trial_id)
            records.append(rec)
    return records


def _append(path: Path, record: TrialRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    with open(timing_path(path), "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"trial_id": record.trial_id, "wall_time": record.wall_time}) + "\n")


def timing_path(trial_log: str | Path) -> Path:
    trial_log = Path(trial_log)
    return trial_log.with_name(trial_log.name + ".timing")


def best_trial(records: Sequence[TrialRecord]) -> TrialRecord:
    """Lowest validation RMSE; ties go to the earliest trial id."""
    if not records:
        raise ArgumentError("no trials")
    return min(records, key=lambda r: (r.val_rmse, r.trial_id))


# --------------------------------------------------------------------------
# Optimization loop
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HpoRun:
    split: SplitSpec = SplitSpec()
    budget: int = 60
    ensemble_size: int = 1
    tpe: TPEParams = TPEParams()
    seed: int = 0
    scenario: str = ""

    def __post_init__(self):
        if self.budget < 1:
            raise ArgumentError("budget must be >= 1")
        if self.budget < self.tpe.n_startup:
            raise ArgumentError("budget must be at least the number of startup trials")
        if self.ensemble_size < 1:
            raise ArgumentError("ensemble_size must be >= 1")

    @property
    def name(self) -> str:
        return self.scenario or self.split.name

    def trial_seed(self, trial_id: int) -> int:
        return int(np.random.SeedSequence([self.seed, trial_id, 1]).generate_state(1)[0])

    def suggest_seed(self, trial_id: int) -> int:
        return int(np.random.SeedSequence([self.seed, trial_id, 2]).generate_state(1)[0])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HpoRun":
        d = dict(d)
        d["split"] = SplitSpec.from_dict(d.get("split", {}))
        d["tpe"] = TPEParams(**d.get("tpe", {}))
        return cls(**d)


def _run_trial(args) -> TrialRecord:
    trial_id, config, data, schedule, run = args
    start = time.perf_counter()
    score = score_config(config, data, schedule, run.ensemble_size, run.trial_seed(trial_id))
    return TrialRecord(trial_id, config, run.ensemble_size, score.member_seeds, score.val_rmse,
                       score.test_rmse, score.status, run.name, time.perf_counter() - start)


def run_hpo(run: HpoRun, data: Dataset | SplitData, trial_log: str | Path,
            schedule: TrainSchedule = TrainSchedule(), space: SearchSpace = SearchSpace(),
            workers: int = 1) -> tuple[HyperConfig, list[TrialRecord]]:
    """Run (or resume) a search; every record is appended to ``trial_log`` as it finishes.

    Trials already present in the log are not re-run. With one worker the
    outcome is a pure function of (run, data, schedule). With more workers
    up to ``workers`` trials are in flight and suggestions use the history
    completed so far.
    """
    if isinstance(data, Dataset):
        data = split_dataset(data, run.split)
    trial_log = Path(trial_log)
    records = read_trial_log(trial_log)
    for rec in records:
        if rec.ensemble_size != run.ensemble_size:
            raise TrialLogError(rec.trial_id + 1, "ensemble size differs from this run")
    done = {r.trial_id for r in records}
    pending = [i for i in range(run.budget) if i not in done]
    if records:
        log.info("resuming %s: %d trials in log, %d to go", trial_log, len(records), len(pending))

    def suggest(trial_id: int) -> HyperConfig:
        return tpe_suggest([r.observation() for r in records], space, run.tpe, run.suggest_seed(trial_id))

    def commit(rec: TrialRecord) -> None:
        _append(trial_log, rec)
        records.append(rec)
        log.info("%s trial %d: val %.4f test %.4f (%s)", run.name, rec.trial_id, rec.val_rmse,
                 rec.test_rmse, rec.status)

    if workers <= 1:
        for trial_id in pending:
            commit(_run_trial((trial_id, suggest(trial_id), data, schedule, run)))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            queue = list(pending)
            running = set()
            while queue or running:
                while queue and len(running) < workers:
                    trial_id = queue.pop(0)
                    running.add(pool.submit(_run_trial, (trial_id, suggest(trial_id), data, schedule, run)))
                finished, running = wait(running, return_when=FIRST_COMPLETED)
                for fut in sorted(finished, key=lambda f: f.result().trial_id):
                    commit(fut.result())
    records.sort(key=lambda r: r.trial_id)
    return best_trial(records).config, records
