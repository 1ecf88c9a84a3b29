import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spectrohpo.dataset import StandardizeStats
from spectrohpo.errors import ArgumentError, DivergenceError, ShapeError
from spectrohpo.nnet import (ADAM_EPS, CNN_B, KERNEL_WIDTHS, AdamState, HyperConfig, ModelWeights,
                             PlateauTracker, TrainSchedule, _adam_step_inplace, adam_step, build_model,
                             conv_output_len, elu, forward, l2_penalty, load_weights, loss_and_grads, mse,
                             parameter_count, predict, save_weights, train, weights_from_json, weights_to_json)

from oracles import central_difference, max_relative_error, random_small_config, walk_shapes

configs = st.builds(
    HyperConfig,
    l2=st.floats(1e-4, 1.0),
    n_kernels=st.integers(1, 13),
    kernel_width=st.sampled_from(KERNEL_WIDTHS),
    n_fc_layers=st.integers(1, 4),
    fc_units=st.integers(1, 24).map(lambda u: 4 * u),
)


# ---------------------------------------------------------------- configs and shapes

def test_cnn_b_parameter_count():
    expected = (21 + 1) + (598 * 36 + 36) + (36 * 18 + 18) + (18 * 12 + 12) + (12 * 1 + 1)
    assert expected == 22493
    assert parameter_count(CNN_B, 618) == walk_shapes(CNN_B, 618) == 22493
    assert build_model(CNN_B, 618, 0).n_params == 22493


@given(configs, st.integers(29, 120))
def test_parameter_count_matches_built_model(config, input_len):
    assert build_model(config, input_len, 0).n_params == parameter_count(config, input_len) \
        == walk_shapes(config, input_len)


def test_fc_halving_rule():
    assert HyperConfig(0.01, 1, 3, 4, 96).widths() == (96, 48, 24, 12)
    assert HyperConfig(0.01, 1, 3, 4, 4).widths() == (4, 2, 1, 1)


@pytest.mark.parametrize("kwargs", [dict(l2=2.0), dict(l2=1e-5), dict(n_kernels=14), dict(kernel_width=9),
                                    dict(n_fc_layers=5), dict(fc_units=98), dict(fc_units=100)])
def test_config_bounds(kwargs):
    base = dict(l2=0.01, n_kernels=1, kernel_width=3, n_fc_layers=1, fc_units=8)
    base.update(kwargs)
    with pytest.raises(ArgumentError):
        HyperConfig(**base)


def test_config_dict_round_trip():
    for config in (CNN_B, HyperConfig(0.3, 5, 7, 2, 40)):
        assert HyperConfig.from_dict(config.to_dict()) == config


def test_conv_output_length():
    assert conv_output_len(618, 21) == 598
    w = build_model(HyperConfig(0.01, 3, 21, 1, 8), 618, 0)
    assert w.params["fc0.w"].shape == (598 * 3, 8)


def test_short_input_is_shape_error():
    with pytest.raises(ShapeError):
        build_model(HyperConfig(0.01, 1, 29, 1, 8), 20, 0)


def test_same_seed_same_weights():
    a, b = build_model(CNN_B, 618, 5), build_model(CNN_B, 618, 5)
    assert a.equals(b)
    assert not a.equals(build_model(CNN_B, 618, 6))


def test_he_initialisation():
    w = build_model(HyperConfig(0.01, 13, 29, 1, 96), 618, 1)
    fan_in = 590 * 13
    assert abs(w.params["fc0.w"].std() - math.sqrt(2 / fan_in)) < 0.01 * math.sqrt(2 / fan_in)
    assert not any(np.any(p) for k, p in w.params.items() if k.endswith(".b"))


# ---------------------------------------------------------------- forward

def test_elu_values():
    np.testing.assert_allclose(elu(np.array([0.0, 2.0, -math.log(2)])), [0.0, 2.0, -0.5], atol=1e-15)


def test_zero_weights_give_output_bias():
    w = build_model(HyperConfig(0.01, 2, 5, 2, 8), 30, 0)
    for p in w.params.values():
        p[...] = 0.0
    w.params["out.b"][0] = 0.7
    np.testing.assert_array_equal(forward(w, np.random.default_rng(0).normal(size=(4, 30))), 0.7)


def test_forward_matches_direct_loops():
    rng = np.random.default_rng(2)
    config = HyperConfig(0.01, 2, 3, 2, 8)
    w = build_model(config, 10, 3)
    x = rng.normal(size=(3, 10))
    p = w.params
    expected = []
    for row in x:
        maps = [[sum(p["conv.w"][k, j] * row[i + j] for j in range(3)) + p["conv.b"][k] for i in range(8)]
                for k in range(2)]
        h = np.array([elu(np.array(v)) for v in np.array(maps).T]).reshape(-1)  # position-major flatten
        for layer in range(2):
            h = elu(h @ p[f"fc{layer}.w"] + p[f"fc{layer}.b"])
        expected.append((h @ p["out.w"] + p["out.b"])[0])
    np.testing.assert_allclose(forward(w, x), expected, rtol=1e-12)


def test_forward_shape_error():
    w = build_model(HyperConfig(0.01, 1, 3, 1, 4), 10, 0)
    with pytest.raises(ShapeError):
        forward(w, np.zeros((2, 11)))


# ---------------------------------------------------------------- loss and gradients

def test_perfect_fit_zero_loss_and_l2_term():
    w = build_model(HyperConfig(0.01, 2, 3, 1, 4), 12, 0)
    x = np.random.default_rng(0).normal(size=(5, 12))
    y = forward(w, x)
    loss, grads = loss_and_grads(w, x, y, 0.0)
    assert loss == 0.0
    assert all(not np.any(g) for g in grads.values())
    l2 = 0.3
    loss, grads = loss_and_grads(w, x, y, l2)
    expected = l2 * sum(np.sum(p ** 2) for k, p in w.params.items() if k.endswith(".w"))
    assert loss == pytest.approx(expected, rel=1e-12) == pytest.approx(l2_penalty(w, l2), rel=1e-12)
    for k, g in grads.items():
        np.testing.assert_allclose(g, 2 * l2 * w.params[k] if k.endswith(".w") else 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    config, input_len = random_small_config(rng)
    w = build_model(config, input_len, seed)
    x, y = rng.normal(size=(6, input_len)), rng.normal(size=6)
    _, analytic = loss_and_grads(w, x, y, config.l2)
    assert max_relative_error(analytic, central_difference(w, x, y, config.l2)) < 1e-4


def test_loss_errors():
    w = build_model(HyperConfig(0.01, 1, 3, 1, 4), 10, 0)
    with pytest.raises(ArgumentError):
        loss_and_grads(w, np.zeros((0, 10)), np.zeros(0), 0.0)
    with pytest.raises(ShapeError):
        loss_and_grads(w, np.zeros((3, 10)), np.zeros(2), 0.0)


# ---------------------------------------------------------------- ADAM

def _scalar_model(value: float) -> ModelWeights:
    return ModelWeights({"out.w": np.array([[value]]), "out.b": np.zeros(1)}, 1)


def test_adam_zero_gradient_keeps_weights():
    w = _scalar_model(1.5)
    state = AdamState.zeros_like(w)
    new, _ = adam_step(w, {k: np.zeros_like(p) for k, p in w.params.items()}, state, 0.005)
    assert new.equals(w)


@pytest.mark.parametrize("g", [0.3, -2.0, 1e-3])
def test_adam_first_step_moves_by_lr(g):
    w = _scalar_model(1.0)
    grads = {"out.w": np.array([[g]]), "out.b": np.zeros(1)}
    new, state = adam_step(w, grads, AdamState.zeros_like(w), 0.005)
    # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = 1.0 - 0.005 * g / (abs(g) + ADAM_EPS)
    assert new.params["out.w"][0, 0] == pytest.approx(expected, rel=1e-12)
    assert abs(abs(new.params["out.w"][0, 0] - 1.0) - 0.005) < 1e-6
    assert state.t == 1


def test_adam_is_pure_and_matches_inplace():
    rng = np.random.default_rng(0)
    w = build_model(HyperConfig(0.01, 2, 3, 1, 4), 10, 0)
    state = AdamState.zeros_like(w)
    snapshot = w.copy()
    grads = [{k: rng.normal(size=p.shape) for k, p in w.params.items()} for _ in range(3)]
    a, sa = w, state
    for g in grads:
        a, sa = adam_step(a, g, sa, 0.01)
    b, sb = adam_step(w, grads[0], state, 0.01)
    assert w.equals(snapshot) and state.t == 0
    again, _ = adam_step(w, grads[0], state, 0.01)
    assert again.equals(b)
    inplace, st_in = w.copy(), AdamState.zeros_like(w)
    for g in grads:
        _adam_step_inplace(inplace, g, st_in, 0.01)
    for k in w.params:
        np.testing.assert_allclose(inplace.params[k], a.params[k], rtol=1e-14)


# ---------------------------------------------------------------- plateau schedule

def test_stream_never_improving_after_e():
    tracker = PlateauTracker(TrainSchedule())
    e = 7
    stop = None
    for epoch in range(1, 200):
        tracker.update(epoch, 1.0 / epoch if epoch <= e else 1.0)
        if tracker.stopped:
            stop = epoch
            break
    assert stop == e + 50
    assert tracker.best_epoch == e
    assert tracker.lr == pytest.approx(0.005 * 0.5 ** 2) == pytest.approx(0.00125)


def test_tiny_decrease_is_not_improvement():
    tracker = PlateauTracker(TrainSchedule(lr_patience=2, es_patience=4))
    assert tracker.update(1, 1.0)
    assert not tracker.update(2, 1.0 - 1e-13)
    assert tracker.update(3, 1.0 - 1e-9)
    assert tracker.best_epoch == 3


def test_improvement_resets_both_counters():
    tracker = PlateauTracker(TrainSchedule(lr_patience=2, es_patience=3))
    for epoch, loss in enumerate([1.0, 1.0, 1.0, 0.5, 0.5, 0.5], start=1):
        tracker.update(epoch, loss)
    # halved once after epochs 2-3, counters reset at 4, halved again at 6
    assert tracker.lr == pytest.approx(0.005 * 0.25)
    assert not tracker.stopped
    tracker.update(7, 0.5)
    assert tracker.stopped


def test_lr_floor():
    tracker = PlateauTracker(TrainSchedule(lr_init=2e-6, lr_patience=1, es_patience=100))
    for epoch in range(1, 10):
        tracker.update(epoch, 1.0)
    assert tracker.lr == 1e-6


def test_schedule_validation():
    with pytest.raises(ArgumentError):
        TrainSchedule(lr_min=1.0)
    with pytest.raises(ArgumentError):
        TrainSchedule(dtype="float16")
    with pytest.raises(ArgumentError):
        TrainSchedule(batch_size=0)


# ---------------------------------------------------------------- training

def _linear_problem(n=1000, d=12, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = x @ rng.normal(size=d)
    y = (y - y.mean()) / y.std()
    cut = 4 * n // 5
    return (x[:cut], y[:cut]), (x[cut:], y[cut:])


def test_training_is_deterministic(small_split):
    cal, val = (small_split.cal.x, small_split.cal.y), (small_split.val.x, small_split.val.y)
    schedule = TrainSchedule(max_epochs=4, batch_size=16)
    w1, r1 = train(HyperConfig(0.01, 2, 7, 2, 16), cal, val, schedule, seed=3)
    w2, r2 = train(HyperConfig(0.01, 2, 7, 2, 16), cal, val, schedule, seed=3)
    assert w1.equals(w2) and r1 == r2
    w3, _ = train(HyperConfig(0.01, 2, 7, 2, 16), cal, val, schedule, seed=4)
    assert not w1.equals(w3)


def test_training_restores_best_epoch(small_split):
    cal, val = (small_split.cal.x, small_split.cal.y), (small_split.val.x, small_split.val.y)
    schedule = TrainSchedule(max_epochs=12, batch_size=8, lr_init=0.05, lr_patience=2, es_patience=4)
    w, record = train(HyperConfig(1e-4, 4, 5, 3, 64), cal, val, schedule, seed=0)
    assert record.best_epoch == int(np.argmin(record.val_loss)) + 1
    assert mse(forward(w, val[0]), val[1]) == pytest.approx(min(record.val_loss), rel=1e-5)
    assert record.epochs_run == len(record.val_loss) == len(record.lr)
    assert record.stop_reason in ("early_stop", "max_epochs")


@pytest.mark.parametrize("config", [HyperConfig(1e-4, 1, 3, 1, 8), HyperConfig(1e-4, 4, 7, 2, 32),
                                    HyperConfig(1e-4, 1, 3, 4, 8)])
def test_learns_noise_free_linear_data(config):
    cal, val = _linear_problem()
    schedule = TrainSchedule(max_epochs=300, batch_size=32, lr_patience=10, es_patience=25)
    w, _ = train(config, cal, val, schedule, seed=0)
    assert math.sqrt(mse(forward(w, val[0]), val[1])) < 0.1


def test_divergence_names_epoch():
    cal, val = _linear_problem(n=250)
    huge = (cal[0] * 1e30, cal[1])
    with pytest.raises(DivergenceError) as info:
        train(HyperConfig(0.01, 1, 3, 1, 8), huge, val, TrainSchedule(max_epochs=3), seed=0)
    assert info.value.epoch == 1


def test_empty_sets_rejected():
    cal, val = _linear_problem()
    with pytest.raises(ArgumentError):
        train(HyperConfig(0.01, 1, 3, 1, 8), (cal[0][:0], cal[1][:0]), val, TrainSchedule(max_epochs=1))


# ---------------------------------------------------------------- predict and serialization

def _stats(mean, std, n=5):
    return StandardizeStats(np.zeros(n), np.ones(n), mean, std)


def test_predict_identity_and_affine():
    w = build_model(HyperConfig(0.01, 1, 3, 1, 4), 5, 0)
    x = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(predict(w, x, _stats(0.0, 1.0)), forward(w, x))
    for p in w.params.values():
        p[...] = 0.0
    w.params["out.b"][0] = 0.25
    np.testing.assert_allclose(predict(w, x, _stats(16.0, 2.0)), 2 * 0.25 + 16)


def test_predict_round_trips_standardization():
    truth = np.array([12.0, 15.5, 18.25])
    stats = _stats(truth.mean(), truth.std(), n=1)
    y = (truth - stats.target_mean) / stats.target_std
    w = ModelWeights({"conv.w": np.ones((1, 1)), "conv.b": np.zeros(1), "fc0.w": np.ones((1, 1)),
                      "fc0.b": np.zeros(1), "out.w": np.ones((1, 1)), "out.b": np.zeros(1)}, 1)
    # shift so every activation stays in the identity part of the ELU
    w.params["conv.b"][0] = 10.0
    w.params["out.b"][0] = -10.0
    np.testing.assert_allclose(predict(w, y[:, None], stats), truth, atol=1e-9)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_weights_json_round_trip(tmp_path, dtype):
    w = build_model(CNN_B, 618, 9, dtype=dtype)
    save_weights(w, tmp_path / "w.json", CNN_B)
    back = load_weights(tmp_path / "w.json")
    assert back.equals(w) and back.params["conv.w"].dtype == dtype
    assert weights_to_json(back, CNN_B) == weights_to_json(w, CNN_B)
    with pytest.raises(ArgumentError):
        weights_from_json('{"format": "other"}')
