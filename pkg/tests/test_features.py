import numpy as np
import pytest

from airrl.features import (GEO_DIM, STATION_SPATIAL_DIM, STATION_TEMPORAL_DIM, TARGET_SPATIAL_DIM,
                            TARGET_TEMPORAL_DIM, NormStats, SplitSpec, bearing_deg, clipped_length,
                            extract_geo, extract_poi, make_sample, quadrant, sector8)


def test_block_widths():
    assert (TARGET_SPATIAL_DIM, TARGET_TEMPORAL_DIM) == (52, 31)
    assert (STATION_SPATIAL_DIM, STATION_TEMPORAL_DIM) == (61, 32)


def test_sample_shapes(small_samples):
    s = small_samples[0]
    assert s.x_l_S.shape == (52,)
    assert s.x_l_T.shape == (4, 31)
    assert s.x_s_S.shape == (s.n_candidates, 61)
    assert s.x_s_T.shape == (s.n_candidates, 4, 32)
    assert s.target_id not in s.cand_ids                   # leave-one-out


def test_temporal_window_ends_at_t(small_samples, small_ctx):
    s = small_samples[5]
    last = s.x_s_T[:, -1, -1]
    expect = small_ctx.stats.apply("iaqi", small_ctx.raw_iaqi[s.cand_ids, s.t])
    np.testing.assert_allclose(last, expect)


def test_bearing_and_sectors():
    assert bearing_deg((0, 0), (0, 1)) == 0.0
    assert bearing_deg((0, 0), (1, 0)) == 90.0
    assert bearing_deg((0, 0), (0, -1)) == 180.0
    assert quadrant([0, 44.9, 45, 135, 225, 314.9, 315]).tolist() == [0, 0, 1, 2, 3, 3, 0]
    assert sector8([0, 22.4, 22.5, 337.5, 180]).tolist() == [0, 0, 1, 0, 4]


def test_poi_counts_strictly_inside_radius():
    poi = [(0.0, 1.0, 3), (1.0, 0.0, 3), (0.0, 2.0, 5), (0.0, -1.9, 0)]
    v = extract_poi(poi, (0.0, 0.0), radius=2.0)
    assert v.sum() == 3                                    # the point at exactly 2 km is excluded
    assert v[0 * 12 + 3] == 1 and v[1 * 12 + 3] == 1 and v[2 * 12 + 0] == 1


def test_clipped_length_cases():
    c = [(0.0, 0.0)]
    assert clipped_length((-5, 0), (5, 0), c, 2.0)[0] == pytest.approx(4.0)
    assert clipped_length((0, 0), (1, 0), c, 2.0)[0] == pytest.approx(1.0)
    assert clipped_length((-5, 3), (5, 3), c, 2.0)[0] == 0.0
    assert clipped_length((1, 1), (1, 1), c, 2.0)[0] == 0.0


def test_geo_coincident_point_gets_sector_zero():
    ns = NormStats().fit("dist", [0.0, 2.0])
    g = extract_geo((3, 3), (3, 3), ns)
    assert g.shape == (GEO_DIM,) and g[1] == 1.0 and g[2:].sum() == 0


def test_norm_constant_column_is_finite():
    ns = NormStats().fit("x", np.full((5, 2), 7.0))
    out = ns.apply("x", np.full((3, 2), 7.0))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(ns.invert("x", ns.apply("x", [[1.0, 2.0]])), [[1.0, 2.0]])


def test_norm_stats_dict_round_trip(small_ctx):
    back = NormStats.from_dict(small_ctx.stats.to_dict())
    assert back == small_ctx.stats


def test_split_validation():
    with pytest.raises(ValueError):
        SplitSpec((1, 2), (2, 3))
    with pytest.raises(ValueError):
        SplitSpec((), (1,))


def test_make_sample_needs_full_window(small_ctx):
    with pytest.raises(ValueError, match="window"):
        make_sample(small_ctx, (5.0, 5.0), 2, range(6))


def test_query_point_sample(small_ctx):
    s = make_sample(small_ctx, (12.0, 7.5), 10, range(6))
    assert s.target_id == -1 and s.n_candidates == 6 and np.isnan(s.truth)
    order = s.distance_order()
    assert np.all(np.diff(s.cand_dist[order]) >= 0)


def test_restrict_keeps_selected_positions(small_samples):
    s = small_samples[0]
    r = s.restrict([2, 0])
    assert r.cand_ids.tolist() == [s.cand_ids[2], s.cand_ids[0]]
    np.testing.assert_array_equal(r.x_s_S, s.x_s_S[[2, 0]])
