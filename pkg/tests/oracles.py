"""Independent reference computations shared by unit and acceptance tests."""
import math

import numpy as np

from spectrohpo.splits import CAL, TEST, VAL
from spectrohpo.nnet import HyperConfig, ModelWeights, loss_and_grads


def central_difference(weights: ModelWeights, x, y, l2: float, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Gradient of the training loss by central finite differences, one coordinate at a time."""
    grads = {}
    for name, p in weights.params.items():
        g = np.empty_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up, _ = loss_and_grads(weights, x, y, l2)
            flat[i] = keep - h
            down, _ = loss_and_grads(weights, x, y, l2)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-7) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name].ravel(), numeric[name].ravel()
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


def walk_shapes(config: HyperConfig, input_len: int) -> int:
    """Parameter count by listing every layer's weight and bias shapes."""
    shapes = [(config.n_kernels, config.kernel_width), (config.n_kernels,)]
    width = (input_len - config.kernel_width + 1) * config.n_kernels
    for k in range(config.n_fc_layers):
        units = config.fc_widths[k] if config.fc_widths else max(1, config.fc_units // 2 ** k)
        shapes += [(width, units), (units,)]
        width = units
    shapes += [(width, 1), (1,)]
    return sum(int(np.prod(s)) for s in shapes)


def random_small_config(rng: np.random.Generator) -> tuple[HyperConfig, int]:
    """A config plus input length whose model has at most 500 parameters."""
    while True:
        config = HyperConfig(float(10 ** rng.uniform(-4, 0)), int(rng.integers(1, 4)),
                             int(rng.choice([3, 5, 7])), int(rng.integers(1, 4)), int(4 * rng.integers(1, 3)))
        input_len = int(rng.integers(config.kernel_width, 24))
        if walk_shapes(config, input_len) <= 500:
            return config, input_len


def check_split_invariants(samples, spec, assignment):
    """Partition and ordering invariants every assignment must satisfy."""
    by_id = {s.id: s for s in samples}
    assert assignment.ids == tuple(s.id for s in samples)
    assert set(assignment.labels) <= {CAL, VAL, TEST}
    for sid, label in zip(assignment.ids, assignment.labels):
        assert (label == TEST) == (by_id[sid].season == spec.test_season)
    cal = [by_id[assignment.ids[i]] for i in assignment.indices(CAL)]
    val = [by_id[assignment.ids[i]] for i in assignment.indices(VAL)]
    n = len(cal) + len(val)
    assert cal and val
    if spec.strategy == "random":
        assert len(val) == math.floor(spec.fraction * n)
    elif spec.strategy == "time_shift":
        assert len(val) == math.ceil(spec.fraction * n)
        assert max((s.date, s.id) for s in cal) < min((s.date, s.id) for s in val)
    else:
        assert all(s.season == spec.season_label for s in val)
        assert all(s.season != spec.season_label for s in cal)
