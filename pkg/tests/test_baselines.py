import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airrl.baselines import (BaselineSpec, interp_gaussian, interp_linear, knn_average,
                             mean_pairwise_distance, parse_k)
from airrl.neural import AttentionParams, attention_pool


def test_linear_hand_example():
    assert interp_linear([(1.0, 40.0), (3.0, 80.0)]) == 50.0


def test_linear_coincident_station_wins():
    assert interp_linear([(0.0, 12.0), (2.0, 99.0)]) == 12.0


@pytest.mark.parametrize("rows,sigma,norm,expect", [
    ([(0.0, 10.0)], 1.0, False, 3.9894228),
    ([(0.0, 10.0)], 1.0, True, 10.0),
    ([(1.0, 10.0)], 1.0, False, 10 / math.sqrt(2 * math.pi) * math.exp(-1)),   # 1.4676266
])
def test_gaussian_examples(rows, sigma, norm, expect):
    assert interp_gaussian(rows, sigma, norm) == pytest.approx(expect, abs=1e-7)


def test_gaussian_rejects_bad_sigma():
    with pytest.raises(ValueError):
        interp_gaussian([(1.0, 1.0)], 0.0)


def test_knn_uses_all_when_short():
    assert knn_average([(1.0, 10.0), (2.0, 20.0)], k=5) == 15.0


def test_knn_ties_by_station_id():
    rows = [(1.0, 100.0, 7), (1.0, 0.0, 2), (3.0, 50.0, 1)]
    assert knn_average(rows, k=1) == 0.0


station_rows = st.lists(st.tuples(st.floats(0.01, 30), st.floats(0, 500)), min_size=1, max_size=12)


@settings(max_examples=60, deadline=None)
@given(station_rows)
def test_interpolators_stay_in_convex_hull(rows):
    v = [r[1] for r in rows]
    lo, hi = min(v) - 1e-9, max(v) + 1e-9
    assert lo <= interp_linear(rows) <= hi
    assert lo <= interp_gaussian(rows, 5.0, normalize=True) <= hi
    assert lo <= knn_average(rows, 3) <= hi


@settings(max_examples=60, deadline=None)
@given(station_rows, st.floats(0.1, 10))
def test_linear_is_scale_invariant(rows, c):
    scaled = [(d * c, v) for d, v in rows]
    assert interp_linear(scaled) == pytest.approx(interp_linear(rows), rel=1e-9, abs=1e-9)


def test_one_station_attention_weight_is_one(rng):
    p = AttentionParams(rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=3),
                        np.asarray(1.0))
    w, _ = attention_pool(p, rng.normal(size=2), rng.normal(size=(1, 2)))
    assert w[0] == 1.0


def test_mean_pairwise_distance():
    assert mean_pairwise_distance([(0, 0), (3, 4), (0, 0)]) == pytest.approx((5 + 0 + 5) / 3)


def test_parse_k_and_spec():
    assert parse_k("all") is None and parse_k(3) == 3
    with pytest.raises(ValueError):
        parse_k(0)
    with pytest.raises(ValueError):
        BaselineSpec("kriging")
