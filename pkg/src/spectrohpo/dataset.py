"""Spectra ingestion, chemometric preprocessing and synthetic seasonal data.

A sample is a 103-band absorbance spectrum with a dry-matter (DM%) target.
Each spectrum is expanded into six 103-long blocks (raw, Savitzky-Golay
first/second derivative, SNV, and SNV derivatives) giving 618 features.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import savgol_filter

from .errors import ArgumentError, DegenerateSpectrumError, RowError, SchemaError, ShapeError

log = logging.getLogger(__name__)

N_BANDS = 103
BLOCKS = ("raw", "d1", "d2", "snv", "snv_d1", "snv_d2")
N_FEATURES = N_BANDS * len(BLOCKS)
SG_WINDOW = 13
SG_POLYORDER = 2
SPECTRAL_COLUMNS = tuple(f"a{i:03d}" for i in range(N_BANDS))
CSV_HEADER = ("id", "date", "season", "dm") + SPECTRAL_COLUMNS
DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class RawSample:
    id: str
    date: dt.date
    season: str
    dm: float
    spectrum: np.ndarray = field(repr=False)

    def __post_init__(self):
        spectrum = np.asarray(self.spectrum, dtype=np.float64)
        if spectrum.shape != (N_BANDS,):
            raise ShapeError(f"sample {self.id}: spectrum must have {N_BANDS} bands, got {spectrum.shape}")
        if not math.isfinite(self.dm):
            raise ArgumentError(f"sample {self.id}: dm must be finite")
        if not self.season:
            raise ArgumentError(f"sample {self.id}: empty season label")
        if not isinstance(self.date, dt.date):
            raise ArgumentError(f"sample {self.id}: date must be a datetime.date")
        spectrum.setflags(write=False)
        object.__setattr__(self, "spectrum", spectrum)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    ids: tuple[str, ...]
    column_names: tuple[str, ...] = field(default_factory=lambda: feature_names())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.column_names):
            raise ShapeError(f"feature matrix shape {values.shape} does not match {len(self.column_names)} columns")
        if values.shape[0] != len(self.ids):
            raise ShapeError("one id per feature row required")
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    def take(self, index: Sequence[int] | np.ndarray) -> "FeatureMatrix":
        index = np.asarray(index, dtype=np.intp)
        return FeatureMatrix(self.values[index], tuple(self.ids[i] for i in index), self.column_names)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("id",) + self.column_names)
            for sid, row in zip(self.ids, self.values):
                writer.writerow([sid] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class StandardizeStats:
    means: np.ndarray
    stds: np.ndarray
    target_mean: float
    target_std: float
    degenerate_columns: tuple[int, ...] = ()

    def __post_init__(self):
        if self.means.shape != self.stds.shape:
            raise ShapeError("means and stds must have equal length")
        if np.any(self.stds <= 0):
            raise ArgumentError("every std must be strictly positive")

    def inverse_features(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.stds + self.means

    def inverse_targets(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "degenerate_columns": list(self.degenerate_columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizeStats":
        return cls(np.asarray(d["means"], dtype=np.float64), np.asarray(d["stds"], dtype=np.float64),
                   float(d["target_mean"]), float(d["target_std"]), tuple(d.get("degenerate_columns", ())))


def feature_names() -> tuple[str, ...]:
    return tuple(f"{block}_{i:03d}" for block in BLOCKS for i in range(N_BANDS))


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------

def load_dataset(path: str | Path, format: str = "csv") -> list[RawSample]:
    """Read samples from the canonical CSV layout.

    The header must be ``id,date,season,dm,a000..a102`` exactly. Rows are
    returned in file order; row numbers in errors count the header as row 1.
    """
    if format != "csv":
        raise ArgumentError(f"unsupported format {format!r}")
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        _check_header(header)
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise SchemaError(f"row {rowno}: expected {N_BANDS} spectral columns, got {len(row) - 4}")
            samples.append(_parse_row(rowno, row))
    log.info("loaded %d samples from %s", len(samples), path)
    return samples


def _check_header(header: list[str]) -> None:
    header = [h.strip() for h in header]
    if tuple(header[:4]) != CSV_HEADER[:4]:
        raise SchemaError(f"header must start with {','.join(CSV_HEADER[:4])}, got {','.join(header[:4])}")
    spectral = header[4:]
    for name in SPECTRAL_COLUMNS:
        if name not in spectral:
            raise SchemaError(f"missing spectral column {name}")
    for name in spectral:
        if name not in SPECTRAL_COLUMNS:
            raise SchemaError(f"unexpected column {name}")
    if tuple(spectral) != SPECTRAL_COLUMNS:
        raise SchemaError("spectral columns out of order or duplicated")


def _parse_row(rowno: int, row: list[str]) -> RawSample:
    sid, date_text, season, dm_text = (c.strip() for c in row[:4])
    try:
        date = dt.date.fromisoformat(date_text)
    except ValueError:
        raise RowError(rowno, f"unparseable date {date_text!r}") from None
    try:
        dm = float(dm_text)
    except ValueError:
        raise RowError(rowno, f"unparseable dm {dm_text!r}") from None
    if not math.isfinite(dm):
        raise RowError(rowno, f"non-finite dm {dm_text!r}")
    if not season:
        raise RowError(rowno, "empty season label")
    try:
        spectrum = np.array([float(v) for v in row[4:]])
    except ValueError as exc:
        raise RowError(rowno, f"unparseable absorbance ({exc})") from None
    return RawSample(sid, date, season, dm, spectrum)


def write_dataset(samples: Iterable[RawSample], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in samples:
            writer.writerow([s.id, s.date.isoformat(), s.season, repr(float(s.dm))]
                            + [repr(float(v)) for v in s.spectrum])


# --------------------------------------------------------------------------
# Preprocessing
# --------------------------------------------------------------------------

def savgol(signal: np.ndarray, window: int = SG_WINDOW, polyorder: int = SG_POLYORDER,
           deriv: int = 0) -> np.ndarray:
    """Savitzky-Golay smoothing/differentiation along the last axis.

    Edges use the polynomial fitted to the first/last full window, so the
    output has the same length as the input. Sample spacing is 1.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if window % 2 != 1 or window < 1:
        raise ArgumentError(f"window must be a positive odd integer, got {window}")
    if polyorder < 0 or window <= polyorder:
        raise ArgumentError(f"need 0 <= polyorder < window, got polyorder={polyorder}, window={window}")
    if deriv not in (0, 1, 2) or deriv > polyorder:
        raise ArgumentError(f"deriv must be in {{0,1,2}} and <= polyorder, got {deriv}")
    if signal.ndim == 0 or signal.shape[-1] < window:
        raise ArgumentError(f"signal length must be >= window ({window})")
    return savgol_filter(signal, window, polyorder, deriv=deriv, delta=1.0, axis=-1, mode="interp")


def snv(spectrum: np.ndarray) -> np.ndarray:
    """Standard Normal Variate: centre and scale by the population std.

    Accepts a single spectrum or a 2-D stack (one spectrum per row).
    """
    x = np.asarray(spectrum, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ArgumentError("snv needs at least 2 values")
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    if np.any(std < DEGENERATE_STD):
        raise DegenerateSpectrumError("flat spectrum: population std below 1e-12")
    return (x - mean) / std


def assemble_features(samples: Sequence[RawSample], window: int = SG_WINDOW,
                      polyorder: int = SG_POLYORDER) -> FeatureMatrix:
    ids = tuple(s.id for s in samples)
    if not samples:
        return FeatureMatrix(np.zeros((0, N_FEATURES)), ids)
    raw = np.stack([s.spectrum for s in samples])
    if raw.shape[1] != N_BANDS:
        raise ShapeError(f"spectra must have {N_BANDS} bands")
    flat = raw.std(axis=1) < DEGENERATE_STD
    if flat.any():
        bad = samples[int(np.flatnonzero(flat)[0])].id
        raise DegenerateSpectrumError(f"sample {bad}: flat spectrum, SNV undefined")
    normed = snv(raw)
    blocks = [
        raw,
        savgol(raw, window, polyorder, 1),
        savgol(raw, window, polyorder, 2),
        normed,
        savgol(normed, window, polyorder, 1),
        savgol(normed, window, polyorder, 2),
    ]
    return FeatureMatrix(np.concatenate(blocks, axis=1), ids)


def standardize(matrix: FeatureMatrix, targets: np.ndarray, stats: StandardizeStats | None = None
                ) -> tuple[FeatureMatrix, np.ndarray, StandardizeStats]:
    """Z-score features column-wise and targets; fit stats unless given.

    Columns with std below 1e-12 keep std 1 (a warning is logged and the
    column index recorded in ``stats.degenerate_columns``).
    """
    values = matrix.values
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (values.shape[0],):
        raise ShapeError(f"targets shape {targets.shape} does not match {values.shape[0]} rows")
    if stats is None:
        if values.shape[0] < 2:
            raise ArgumentError("fitting standardization needs at least 2 rows")
        means = values.mean(axis=0)
        stds = values.std(axis=0)
        degenerate = np.flatnonzero(stds < DEGENERATE_STD)
        if degenerate.size:
            log.warning("%d degenerate feature columns; std set to 1", degenerate.size)
            stds = np.where(stds < DEGENERATE_STD, 1.0, stds)
        target_std = float(targets.std())
        if target_std < DEGENERATE_STD:
            log.warning("degenerate target column; std set to 1")
            target_std = 1.0
        stats = StandardizeStats(means, stds, float(targets.mean()), target_std,
                                 tuple(int(i) for i in degenerate))
    elif stats.means.shape != (values.shape[1],):
        raise ShapeError(f"stats cover {stats.means.shape[0]} columns, matrix has {values.shape[1]}")
    out = FeatureMatrix((values - stats.means) / stats.stds, matrix.ids, matrix.column_names)
    return out, (targets - stats.target_mean) / stats.target_std, stats


@dataclass(frozen=True)
class Dataset:
    """Samples together with their assembled (unstandardized) features."""

    samples: tuple[RawSample, ...]
    features: FeatureMatrix

    @classmethod
    def from_samples(cls, samples: Sequence[RawSample], window: int = SG_WINDOW,
                     polyorder: int = SG_POLYORDER) -> "Dataset":
        return cls(tuple(samples), assemble_features(samples, window, polyorder))

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        return cls.from_samples(load_dataset(path))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def targets(self) -> np.ndarray:
        return np.array([s.dm for s in self.samples])


# --------------------------------------------------------------------------
# Synthetic seasonal-drift data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticDesign:
    """Peak layout and DM functional for the synthetic generator.

    Heights of the three absorbance peaks drive DM linearly; each season
    shifts every peak centre by its drift offset (in bands) and adds
    ``drift_weight * offset`` to DM.
    """

    centers: tuple[float, float, float] = (28.0, 55.0, 80.0)
    widths: tuple[float, float, float] = (7.0, 9.0, 6.0)
    height_range: tuple[float, float] = (0.4, 1.6)
    dm_intercept: float = 14.0
    dm_weights: tuple[float, float, float] = (3.0, -1.5, 2.0)
    drift_weight: float = 0.5
    baseline_sd: float = 0.05
    scatter_sd: float = 0.05
    spectral_noise_sd: float = 2e-3

    def dm(self, heights: np.ndarray, offset: float) -> np.ndarray:
        heights = np.atleast_2d(heights)
        return self.dm_intercept + heights @ np.asarray(self.dm_weights) + self.drift_weight * offset


DEFAULT_DESIGN = SyntheticDesign()


def synthetic_heights(seed: int, seasons: Sequence[tuple[str, int, float]]) -> list[np.ndarray]:
    """Per-season peak heights drawn by :func:`generate_synthetic` for ``seed``."""
    return _draw_heights(np.random.SeedSequence(seed).spawn(4)[0], seasons, DEFAULT_DESIGN)


def _draw_heights(seq, seasons, design):
    rng = np.random.default_rng(seq)
    lo, hi = design.height_range
    return [rng.uniform(lo, hi, size=(n, 3)) for _, n, _ in seasons]


def generate_synthetic(seed: int, seasons: Sequence[tuple[str, int, float]], noise_sd: float = 0.2,
                       design: SyntheticDesign = DEFAULT_DESIGN) -> list[RawSample]:
    """Simulate spectra from several harvest seasons with calibration drift.

    ``seasons`` lists ``(label, n_samples, drift_offset)`` in chronological
    order. Labels that parse as integers are used as the calendar year of
    the season; otherwise years count up from 2015.
    """
    if not seasons:
        raise ArgumentError("at least one season required")
    for label, n, _ in seasons:
        if n < 1:
            raise ArgumentError(f"season {label!r} needs n_samples >= 1")
    if noise_sd < 0:
        raise ArgumentError("noise_sd must be non-negative")
    seq_heights, seq_dates, seq_spectra, seq_noise = np.random.SeedSequence(seed).spawn(4)
    heights = _draw_heights(seq_heights, seasons, design)
    date_rng = np.random.default_rng(seq_dates)
    spec_rng = np.random.default_rng(seq_spectra)
    noise_rng = np.random.default_rng(seq_noise)
    bands = np.arange(N_BANDS, dtype=np.float64)
    samples = []
    for k, ((label, n, offset), h) in enumerate(zip(seasons, heights)):
        year = int(label) if str(label).isdigit() else 2015 + k
        start = dt.date(year, 1, 1)
        days = np.sort(date_rng.integers(0, 365, size=n))
        centers = np.asarray(design.centers) + offset
        profiles = np.exp(-0.5 * ((bands[None, :] - centers[:, None]) / np.asarray(design.widths)[:, None]) ** 2)
        peaks = h @ profiles
        baseline = 0.3 + spec_rng.normal(0.0, design.baseline_sd, size=(n, 1)) \
            + spec_rng.normal(0.0, design.baseline_sd, size=(n, 1)) * bands / N_BANDS
        scatter = 1.0 + spec_rng.normal(0.0, design.scatter_sd, size=(n, 1))
        spectra = baseline + scatter * peaks + spec_rng.normal(0.0, design.spectral_noise_sd, size=(n, N_BANDS))
        dm = design.dm(h, offset) + noise_rng.normal(0.0, 1.0, size=n) * noise_sd
        for i in range(n):
            samples.append(RawSample(f"{label}-{i:05d}", start + dt.timedelta(days=int(days[i])),
                                     str(label), float(dm[i]), spectra[i]))
    return samples
