"""Error metrics and distribution summaries."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ArgumentError


def rmse(predictions, truth) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ArgumentError(f"rmse needs equal-length vectors, got {p.shape} and {t.shape}")
    if p.size == 0:
        raise ArgumentError("rmse of empty vectors")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass(frozen=True)
class Summary:
    mean: float
    interval_low: float
    interval_high: float
    q1: float
    median: float
    q3: float

    @property
    def quartiles(self) -> tuple[float, float, float]:
        return self.q1, self.median, self.q3

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(values) -> Summary:
    """Mean, empirical 95% interval (2.5/97.5 percentiles) and quartiles."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ArgumentError("summarize needs at least 2 values")
    lo, q1, med, q3, hi = np.percentile(x, [2.5, 25, 50, 75, 97.5])
    mean = float(x.mean())
    # percentile interpolation can undershoot the mean by an ulp on constant input
    return Summary(mean, float(min(lo, mean)), float(max(hi, mean)), float(q1), float(med), float(q3))
