import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airrl.neural import (Adam, AttentionParams, Dense, LstmLayer, LstmStack, attention_pool,
                          dense_forward, dropout, lstm_forward, soft_update, softmax)
from airrl.selftest import check_attention, check_dense, check_lstm, check_policy, TOLERANCE


def test_dropout_preserves_mean(rng):
    x = np.ones(200_000)
    y = dropout(x, 0.3, rng, training=True)
    assert abs(y.mean() - 1.0) < 0.01
    assert np.isclose(np.mean(y == 0), 0.3, atol=0.01)


def test_dropout_identity_at_inference(rng):
    x = rng.normal(size=10)
    np.testing.assert_array_equal(dropout(x, 0.5, rng, training=False), x)


def test_zero_parameter_lstm_outputs_zero():
    stack = LstmStack([LstmLayer(np.zeros((12, 5)), np.zeros(12)),
                       LstmLayer(np.zeros((12, 6)), np.zeros(12))])
    h, _ = lstm_forward(stack, np.random.default_rng(0).normal(size=(7, 2)))
    np.testing.assert_array_equal(h, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariant(xs, c):
    x = np.array(xs)
    np.testing.assert_allclose(softmax(x + c), softmax(x), atol=1e-12)
    assert softmax(x).sum() == pytest.approx(1.0)


def test_masked_softmax_zeroes_masked_entries():
    w = softmax(np.array([5.0, 1.0, 2.0]), mask=np.array([False, True, True]))
    assert w[0] == 0.0 and w.sum() == pytest.approx(1.0)


def test_single_station_gets_weight_one(rng):
    Z = 3
    p = AttentionParams(rng.normal(size=(4, 2 * Z)), rng.normal(size=4), rng.normal(size=4),
                        np.asarray(0.3))
    z = rng.normal(size=(1, Z))
    w, pooled = attention_pool(p, rng.normal(size=Z), z)
    assert w.tolist() == [1.0]
    np.testing.assert_allclose(pooled, z[0])


def test_attention_permutation_equivariant(rng):
    Z = 3
    p = AttentionParams(rng.normal(size=(4, 2 * Z)), rng.normal(size=4), rng.normal(size=4),
                        np.asarray(0.0))
    z_l = rng.normal(size=Z)
    z = rng.normal(size=(5, Z))
    perm = rng.permutation(5)
    w, pooled = attention_pool(p, z_l, z)
    w2, pooled2 = attention_pool(p, z_l, z[perm])
    np.testing.assert_allclose(w2, w[perm])
    np.testing.assert_allclose(pooled2, pooled)


def test_attention_rejects_empty(rng):
    p = AttentionParams(np.zeros((2, 4)), np.zeros(2), np.zeros(2), np.asarray(0.0))
    with pytest.raises(ValueError):
        attention_pool(p, np.zeros(2), np.zeros((0, 2)))


def test_dense_shape_error():
    layer = Dense(np.zeros((2, 3)), np.zeros(2), "relu")
    with pytest.raises(ValueError):
        dense_forward(layer, np.zeros((4, 5)))


@pytest.mark.parametrize("tau,expect", [(0.0, 0.0), (1.0, 1.0), (0.1, 0.1), (0.5, 0.5)])
def test_soft_update_examples(tau, expect):
    out = soft_update({"w": np.zeros(2)}, {"w": np.ones(2)}, tau)
    np.testing.assert_allclose(out["w"], expect)


def test_soft_update_rejects_bad_tau():
    with pytest.raises(ValueError):
        soft_update({"w": np.zeros(1)}, {"w": np.ones(1)}, 1.5)


def test_adam_minimizes_quadratic():
    p = {"x": np.array([3.0, -2.0])}
    opt = Adam(0.1)
    for _ in range(500):
        opt.step(p, {"x": 2 * p["x"]})
    assert np.max(np.abs(p["x"])) < 1e-2


@pytest.mark.parametrize("check", [check_dense, check_lstm, check_attention, check_policy])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(check, seed):
    assert check(seed) <= TOLERANCE
