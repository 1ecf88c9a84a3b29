"""Small 1D-CNN regressor with hand-written backpropagation.

Architecture: one valid, stride-1 convolution over the whole feature
vector (single input channel), ELU, flatten, 1-4 fully-connected ELU
layers, and a linear scalar output. Trained with ADAM on MSE plus an L2
penalty on kernel/weight matrices, with learning-rate halving on
validation plateaus and early stopping that restores the best epoch.
"""
from __future__ import annotations

import base64
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import StandardizeStats
from .errors import ArgumentError, DivergenceError, ShapeError

log = logging.getLogger(__name__)

KERNEL_WIDTHS = (3, 5, 7, 11, 15, 21, 29)
L2_RANGE = (1e-4, 1.0)
N_KERNELS_RANGE = (1, 13)
N_FC_LAYERS_RANGE = (1, 4)
FC_UNITS_RANGE = (4, 96)
FC_UNITS_STEP = 4

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7
IMPROVEMENT_TOL = 1e-12


@dataclass(frozen=True)
class HyperConfig:
    l2: float
    n_kernels: int
    kernel_width: int
    n_fc_layers: int
    fc_units: int
    # explicit FC widths; only used to instantiate hand-designed baselines
    fc_widths: tuple[int, ...] | None = None

    def __post_init__(self):
        if not L2_RANGE[0] <= self.l2 <= L2_RANGE[1]:
            raise ArgumentError(f"l2={self.l2} outside {L2_RANGE}")
        if not N_KERNELS_RANGE[0] <= self.n_kernels <= N_KERNELS_RANGE[1]:
            raise ArgumentError(f"n_kernels={self.n_kernels} outside {N_KERNELS_RANGE}")
        if self.kernel_width not in KERNEL_WIDTHS:
            raise ArgumentError(f"kernel_width={self.kernel_width} not in {KERNEL_WIDTHS}")
        if not N_FC_LAYERS_RANGE[0] <= self.n_fc_layers <= N_FC_LAYERS_RANGE[1]:
            raise ArgumentError(f"n_fc_layers={self.n_fc_layers} outside {N_FC_LAYERS_RANGE}")
        if not FC_UNITS_RANGE[0] <= self.fc_units <= FC_UNITS_RANGE[1] or self.fc_units % FC_UNITS_STEP:
            raise ArgumentError(f"fc_units={self.fc_units} must be a multiple of 4 in {FC_UNITS_RANGE}")
        if self.fc_widths is not None:
            widths = tuple(int(w) for w in self.fc_widths)
            if len(widths) != self.n_fc_layers or widths[0] != self.fc_units or min(widths) < 1:
                raise ArgumentError("fc_widths must have n_fc_layers positive entries starting at fc_units")
            object.__setattr__(self, "fc_widths", widths)

    def widths(self) -> tuple[int, ...]:
        if self.fc_widths is not None:
            return self.fc_widths
        return tuple(max(1, self.fc_units // 2 ** k) for k in range(self.n_fc_layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.fc_widths is None:
            del d["fc_widths"]
        else:
            d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperConfig":
        widths = d.get("fc_widths")
        return cls(float(d["l2"]), int(d["n_kernels"]), int(d["kernel_width"]), int(d["n_fc_layers"]),
                   int(d["fc_units"]), tuple(widths) if widths is not None else None)


# Expert-tuned baseline: 1 kernel of width 21, FC 36-18-12, L2 0.0055.
CNN_B = HyperConfig(l2=0.0055, n_kernels=1, kernel_width=21, n_fc_layers=3, fc_units=36, fc_widths=(36, 18, 12))


@dataclass(frozen=True)
class TrainSchedule:
    max_epochs: int = 750
    batch_size: int = 128
    lr_init: float = 0.005
    lr_factor: float = 0.5
    lr_patience: int = 25
    lr_min: float = 1e-6
    es_patience: int = 50
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ArgumentError("dtype must be float32 or float64")
        if self.lr_min > self.lr_init:
            raise ArgumentError("lr_min must not exceed lr_init")
        if min(self.lr_patience, self.es_patience, self.max_epochs, self.batch_size) < 1:
            raise ArgumentError("patiences, max_epochs and batch_size must be positive")
        if not 0 < self.lr_factor < 1:
            raise ArgumentError("lr_factor must lie in (0, 1)")

    @classmethod
    def desk(cls) -> "TrainSchedule":
        """Shortened schedule for experiments on a few hundred samples per season.

        The batch is smaller so an epoch still takes a few dozen ADAM steps;
        epoch budget and patiences shrink by about 20x.
        """
        return cls(max_epochs=40, batch_size=32, lr_patience=4, es_patience=8)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelWeights:
    """Named parameter arrays: ``conv.w``, ``conv.b``, ``fc{i}.w/b``, ``out.w/b``."""

    params: dict[str, np.ndarray]
    input_len: int

    @property
    def kernel_width(self) -> int:
        return self.params["conv.w"].shape[1]

    @property
    def n_kernels(self) -> int:
        return self.params["conv.w"].shape[0]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def fc_widths(self) -> list[int]:
        return [p.shape[1] for k, p in self.params.items() if k.startswith("fc") and k.endswith(".w")]

    def copy(self) -> "ModelWeights":
        return ModelWeights({k: v.copy() for k, v in self.params.items()}, self.input_len)

    def equals(self, other: "ModelWeights") -> bool:
        return (self.input_len == other.input_len and self.params.keys() == other.params.keys()
                and all(np.array_equal(v, other.params[k]) for k, v in self.params.items()))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, weights: ModelWeights) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in weights.params.items()},
                   {k: np.zeros_like(p) for k, p in weights.params.items()}, 0)


@dataclass
class TrainRecord:
    epochs_run: int
    best_epoch: int
    cal_loss: list[float]
    val_loss: list[float]
    lr: list[float]
    final_lr: float
    stop_reason: str

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1]

    def to_dict(self) -> dict:
        return asdict(self)


def conv_output_len(input_len: int, kernel_width: int) -> int:
    return input_len - kernel_width + 1


def _is_weight(name: str) -> bool:
    return name.endswith(".w")


def build_model(config: HyperConfig, input_len: int, seed: int, dtype=np.float64) -> ModelWeights:
    """He-normal weights (std sqrt(2/fan_in)), zero biases."""
    if input_len < config.kernel_width:
        raise ShapeError(f"input_len {input_len} shorter than kernel width {config.kernel_width}")
    rng = np.random.default_rng(seed)

    def he(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dtype)

    params = {
        "conv.w": he(config.kernel_width, (config.n_kernels, config.kernel_width)),
        "conv.b": np.zeros(config.n_kernels, dtype=dtype),
    }
    fan_in = conv_output_len(input_len, config.kernel_width) * config.n_kernels
    for i, width in enumerate(config.widths()):
        params[f"fc{i}.w"] = he(fan_in, (fan_in, width))
        params[f"fc{i}.b"] = np.zeros(width, dtype=dtype)
        fan_in = width
    params["out.w"] = he(fan_in, (fan_in, 1))
    params["out.b"] = np.zeros(1, dtype=dtype)
    return ModelWeights(params, input_len)


def elu(z: np.ndarray) -> np.ndarray:
    return np.expm1(np.minimum(z, 0.0)) + np.maximum(z, 0.0)


def _check_batch(weights: ModelWeights, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != weights.input_len:
        raise ShapeError(f"batch shape {batch.shape} incompatible with input length {weights.input_len}")
    return batch.astype(weights.params["conv.w"].dtype, copy=False)


def _n_fc(params: dict) -> int:
    return sum(1 for k in params if k.startswith("fc") and k.endswith(".w"))


def _forward(params: dict, x: np.ndarray, keep: bool):
    k = params["conv.w"].shape[1]
    # im2col: one contiguous (rows * positions, k) matrix so the conv is a single GEMM
    windows = np.ascontiguousarray(sliding_window_view(x, k, axis=1)).reshape(-1, k)
    a = elu(windows @ params["conv.w"].T + params["conv.b"])
    cache = [(windows, a)] if keep else None
    h = a.reshape(x.shape[0], -1)
    for i in range(_n_fc(params)):
        h_next = elu(h @ params[f"fc{i}.w"] + params[f"fc{i}.b"])
        if keep:
            cache.append((h, h_next))
        h = h_next
    out = (h @ params["out.w"] + params["out.b"])[:, 0]
    if keep:
        cache.append(h)
    return out, cache


def forward(weights: ModelWeights, batch: np.ndarray) -> np.ndarray:
    """Network output in standardized target units, one value per row."""
    out, _ = _forward(weights.params, _check_batch(weights, batch), keep=False)
    return out


def _elu_grad(a: np.ndarray) -> np.ndarray:
    # from the activation alone: 1 where a > 0, a + 1 = exp(z) elsewhere
    return np.minimum(a, 0.0) + 1.0


def l2_penalty(weights: ModelWeights, l2: float) -> float:
    return l2 * sum(float(np.sum(p * p)) for k, p in weights.params.items() if _is_weight(k))


def loss_and_grads(weights: ModelWeights, batch: np.ndarray, targets: np.ndarray, l2: float
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """MSE + l2 * sum of squared weight-matrix entries, with exact gradients."""
    x = _check_batch(weights, batch)
    y = np.asarray(targets, dtype=x.dtype)
    if x.shape[0] == 0:
        raise ArgumentError("empty batch")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"targets shape {y.shape} does not match batch of {x.shape[0]}")
    p = weights.params
    out, cache = _forward(p, x, keep=True)
    resid = out - y
    n = x.shape[0]
    loss = float(resid.astype(np.float64) @ resid) / n + l2_penalty(weights, l2)

    grads = {}
    d = (2.0 / n) * resid
    h_last = cache[-1]
    grads["out.w"] = (h_last.T @ d)[:, None]
    grads["out.b"] = np.array([d.sum()], dtype=x.dtype)
    dh = d[:, None] * p["out.w"][:, 0][None, :]
    for i in reversed(range(_n_fc(p))):
        h_prev, a = cache[i + 1]
        dz = dh * _elu_grad(a)
        grads[f"fc{i}.w"] = h_prev.T @ dz
        grads[f"fc{i}.b"] = dz.sum(axis=0)
        dh = dz @ p[f"fc{i}.w"].T
    windows, a = cache[0]
    dz = dh.reshape(a.shape) * _elu_grad(a)
    grads["conv.w"] = dz.T @ windows
    grads["conv.b"] = dz.sum(axis=0)
    if l2:
        for name in grads:
            if _is_weight(name):
                grads[name] = grads[name] + 2.0 * l2 * p[name]
    return loss, {name: grads[name] for name in p}


def adam_step(weights: ModelWeights, grads: dict[str, np.ndarray], state: AdamState, lr: float
              ) -> tuple[ModelWeights, AdamState]:
    """One bias-corrected ADAM update; inputs are left untouched."""
    t = state.t + 1
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    params, m, v = {}, {}, {}
    for name, w in weights.params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        params[name] = w - lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + ADAM_EPS)
    return ModelWeights(params, weights.input_len), AdamState(m, v, t)


def _adam_step_inplace(weights: ModelWeights, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    # same arithmetic as adam_step, without allocating new parameter arrays
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, w in weights.params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        w -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


class PlateauTracker:
    """Learning-rate halving and early stopping driven by a validation stream.

    Both patience counters advance on every non-improving epoch and reset
    on any improvement (a strict decrease of the best loss by > 1e-12).
    The LR drop is applied before the early-stop check in the same epoch.
    """

    def __init__(self, schedule: TrainSchedule):
        self.schedule = schedule
        self.best = math.inf
        self.best_epoch = 0
        self.lr = schedule.lr_init
        self.lr_wait = 0
        self.es_wait = 0
        self.stopped = False

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best - IMPROVEMENT_TOL:
            self.best, self.best_epoch = val_loss, epoch
            self.lr_wait = self.es_wait = 0
            return True
        self.lr_wait += 1
        self.es_wait += 1
        if self.lr_wait >= self.schedule.lr_patience:
            self.lr = max(self.lr * self.schedule.lr_factor, self.schedule.lr_min)
            self.lr_wait = 0
        if self.es_wait >= self.schedule.es_patience:
            self.stopped = True
        return False


def mse(pred: np.ndarray, y: np.ndarray) -> float:
    r = np.asarray(pred, dtype=np.float64) - y
    return float(r @ r) / len(r)


def train(config: HyperConfig, cal: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
          schedule: TrainSchedule = TrainSchedule(), seed: int = 0) -> tuple[ModelWeights, TrainRecord]:
    """Fit one network; returns the best-validation weights and a training record."""
    dtype = np.dtype(schedule.dtype)
    x_cal, y_cal = np.asarray(cal[0], dtype=dtype), np.asarray(cal[1], dtype=dtype)
    x_val, y_val = np.asarray(val[0], dtype=dtype), np.asarray(val[1], dtype=dtype)
    if len(y_cal) == 0 or len(y_val) == 0:
        raise ArgumentError("calibration and validation sets must be non-empty")
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    weights = build_model(config, x_cal.shape[1], int(init_seq.generate_state(1)[0]), dtype=dtype)
    state = AdamState.zeros_like(weights)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    tracker = PlateauTracker(schedule)
    best = weights
    n = len(y_cal)
    cal_hist, val_hist, lr_hist = [], [], []
    stop_reason = "max_epochs"
    epoch = 0
    for epoch in range(1, schedule.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        lr = tracker.lr
        # overflow shows up as a non-finite loss, which is checked explicitly
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, schedule.batch_size):
                idx = order[start:start + schedule.batch_size]
                loss, grads = loss_and_grads(weights, x_cal[idx], y_cal[idx], config.l2)
                if not math.isfinite(loss):
                    raise DivergenceError(epoch)
                total += loss * len(idx)
                _adam_step_inplace(weights, grads, state, lr)
            val_loss = mse(forward(weights, x_val), y_val)
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, "non-finite validation loss")
        cal_hist.append(total / n)
        val_hist.append(val_loss)
        lr_hist.append(lr)
        if tracker.update(epoch, val_loss):
            best = weights.copy()
        if tracker.stopped:
            stop_reason = "early_stop"
            break
    record = TrainRecord(epoch, tracker.best_epoch, cal_hist, val_hist, lr_hist, tracker.lr, stop_reason)
    return best, record


def predict(weights: ModelWeights, features: np.ndarray, stats: StandardizeStats) -> np.ndarray:
    """DM% predictions: network output mapped back through the target scaling."""
    return stats.inverse_targets(forward(weights, features))


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

WEIGHTS_FORMAT = "spectrohpo-weights"


def weights_to_json(weights: ModelWeights, config: HyperConfig | None = None) -> str:
    arrays = []
    for name, p in weights.params.items():
        data = np.ascontiguousarray(p, dtype="<f8").tobytes()
        arrays.append({"name": name, "shape": list(p.shape), "dtype": "<f8", "source_dtype": p.dtype.name,
                       "data": base64.b64encode(data).decode("ascii")})
    doc = {"format": WEIGHTS_FORMAT, "version": 1, "input_len": weights.input_len, "arrays": arrays}
    if config is not None:
        doc["config"] = config.to_dict()
    return json.dumps(doc, indent=1)


def weights_from_json(text: str) -> ModelWeights:
    doc = json.loads(text)
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ArgumentError("not a weights file")
    params = {}
    for a in doc["arrays"]:
        flat = np.frombuffer(base64.b64decode(a["data"]), dtype="<f8")
        params[a["name"]] = flat.reshape(a["shape"]).astype(a.get("source_dtype", "float64"))
    return ModelWeights(params, int(doc["input_len"]))


def save_weights(weights: ModelWeights, path: str | Path, config: HyperConfig | None = None) -> None:
    Path(path).write_text(weights_to_json(weights, config))


def load_weights(path: str | Path) -> ModelWeights:
    return weights_from_json(Path(path).read_text())


def save_record(record: TrainRecord, path: str | Path) -> None:
    Path(path).write_text(json.dumps(record.to_dict(), indent=1))


def parameter_count(config: HyperConfig, input_len: int) -> int:
    """Closed-form parameter count, independent of :func:`build_model`."""
    widths: Sequence[int] = config.widths()
    flat = conv_output_len(input_len, config.kernel_width) * config.n_kernels
    count = config.n_kernels * (config.kernel_width + 1)
    fan_in = flat
    for w in list(widths) + [1]:
        count += fan_in * w + w
        fan_in = w
    return count
