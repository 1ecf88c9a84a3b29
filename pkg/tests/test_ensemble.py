import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from spectrohpo.ensemble import (EnsembleSpec, PredictionPool, ensemble_predict, member_seed,
                                 simulate_ensemble_sizes, train_ensemble, train_pools, write_size_study)
from spectrohpo.errors import ArgumentError
from spectrohpo.metrics import rmse
from spectrohpo.nnet import HyperConfig, predict, train

from conftest import TINY_SCHEDULE

CONFIG = HyperConfig(0.01, 2, 7, 2, 16)


def _pool(predictions, truth=None):
    predictions = np.asarray(predictions, dtype=float)
    truth = np.zeros(predictions.shape[1]) if truth is None else truth
    return PredictionPool(predictions, tuple(range(len(predictions))), truth)


def test_member_seeds_do_not_depend_on_size():
    assert EnsembleSpec(3, 7).seeds() == EnsembleSpec(10, 7).seeds()[:3]
    assert EnsembleSpec(3, 7).seeds() != EnsembleSpec(3, 8).seeds()
    assert len(set(EnsembleSpec(50, 0).seeds())) == 50
    assert member_seed(7, 0) == EnsembleSpec(1, 7).seeds()[0]


def test_single_member_pool_equals_plain_training(small_split):
    pool = train_ensemble(CONFIG, small_split, TINY_SCHEDULE, EnsembleSpec(1, 4))
    w, _ = train(CONFIG, (small_split.cal.x, small_split.cal.y), (small_split.val.x, small_split.val.y),
                 TINY_SCHEDULE, member_seed(4, 0))
    np.testing.assert_array_equal(pool.predictions[0], predict(w, small_split.test.x, small_split.stats))
    np.testing.assert_array_equal(pool.truth, small_split.test.dm)


def test_pools_repeatable_and_jensen(small_split):
    spec = EnsembleSpec(5, 2)
    a = train_pools(CONFIG, small_split, TINY_SCHEDULE, spec, ("val", "test"))
    b = train_pools(CONFIG, small_split, TINY_SCHEDULE, spec, ("val", "test"))
    for name in ("val", "test"):
        np.testing.assert_array_equal(a[name].predictions, b[name].predictions)
        pool = a[name]
        ens = rmse(ensemble_predict(pool), pool.truth)
        assert ens ** 2 <= np.mean(pool.member_rmse() ** 2) + 1e-12
        assert ens <= pool.member_rmse().mean() + 1e-12


def test_parallel_pool_matches_serial(small_split):
    spec = EnsembleSpec(3, 5)
    serial = train_ensemble(CONFIG, small_split, TINY_SCHEDULE, spec, "val")
    parallel = train_ensemble(CONFIG, small_split, TINY_SCHEDULE, spec, "val", workers=2)
    np.testing.assert_array_equal(serial.predictions, parallel.predictions)


def test_ensemble_predict_cases():
    p = np.array([1.0, 4.0, -2.0])
    c = 1.5
    assert np.array_equal(ensemble_predict(_pool([p]), [0]), p)
    np.testing.assert_allclose(ensemble_predict(_pool([p, -p + 2 * c])), c)
    same = _pool(np.tile(p, (40, 1)))
    np.testing.assert_allclose(ensemble_predict(same), p, rtol=1e-15)
    with pytest.raises(ArgumentError):
        ensemble_predict(same, [])


@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 15)), elements=st.floats(-50, 50)),
       st.integers(0, 2 ** 31))
def test_averaging_never_worse_than_mean_member_mse(predictions, seed):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=predictions.shape[1])
    pool = _pool(predictions, truth)
    members = rng.choice(pool.size, size=rng.integers(1, pool.size + 1), replace=False)
    ens_mse = np.mean((ensemble_predict(pool, members) - truth) ** 2)
    member_mse = np.mean((predictions[members] - truth) ** 2, axis=1)
    assert ens_mse <= member_mse.mean() * (1 + 1e-12) + 1e-12


def test_size_study_combinatorics():
    pool = _pool(np.random.default_rng(0).normal(size=(10, 20)))
    study = simulate_ensemble_sizes(pool, [1, 3, 10], combos_per_size=50, seed=1)
    assert len(study[10].subsets) == 1
    assert study[1].subsets == tuple((i,) for i in range(10))
    np.testing.assert_allclose(study[1].rmse, pool.member_rmse())
    subsets = study[3].subsets
    assert len(subsets) == 50 == len(set(subsets))
    assert all(list(s) == sorted(set(s)) for s in subsets)
    again = simulate_ensemble_sizes(pool, [3], combos_per_size=50, seed=1)
    assert again[3].subsets == subsets
    with pytest.raises(ArgumentError):
        simulate_ensemble_sizes(pool, [11])


def test_size_study_enumerates_when_few_combinations():
    pool = _pool(np.random.default_rng(0).normal(size=(5, 4)))
    assert len(simulate_ensemble_sizes(pool, [2], combos_per_size=200)[2].subsets) == math.comb(5, 2)


def test_large_pool_single_members_exhaustive():
    pool = _pool(np.random.default_rng(0).normal(size=(2000, 3)))
    assert len(simulate_ensemble_sizes(pool, [1])[1].rmse) == 2000


def test_independent_errors_shrink_with_size():
    # members = truth + independent zero-mean noise: averaging N cuts RMSE by ~sqrt(N)
    rng = np.random.default_rng(0)
    truth = rng.normal(size=200)
    pool = _pool(truth + rng.normal(0, 1.0, size=(200, 200)), truth)
    study = simulate_ensemble_sizes(pool, [1, 25], combos_per_size=200, seed=0)
    m1, m25 = np.median(study[1].rmse), np.median(study[25].rmse)
    assert m25 < m1
    assert m25 == pytest.approx(m1 / 5, rel=0.15)


def test_pool_csv_round_trip(tmp_path):
    pool = PredictionPool(np.random.default_rng(1).normal(size=(3, 4)), (11, 12, 13), np.arange(4.0),
                          CONFIG, "val", (2,))
    pool.to_csv(tmp_path / "pool.csv")
    back = PredictionPool.from_csv(tmp_path / "pool.csv")
    np.testing.assert_array_equal(back.predictions, pool.predictions)
    np.testing.assert_array_equal(back.truth, pool.truth)
    assert back.seeds == pool.seeds and back.config == CONFIG and back.eval_set == "val"


def test_write_size_study(tmp_path):
    pool = _pool(np.random.default_rng(0).normal(size=(4, 6)))
    write_size_study(simulate_ensemble_sizes(pool, [1, 2]), tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "size,combination,rmse" and len(lines) == 1 + 4 + 6


def test_pool_validation():
    with pytest.raises(ArgumentError):
        PredictionPool(np.zeros((2, 3)), (1,), np.zeros(3))
    with pytest.raises(ArgumentError):
        PredictionPool(np.zeros((2, 3)), (1, 2), np.zeros(4))
    with pytest.raises(ArgumentError):
        EnsembleSpec(0)
