import numpy as np
import pytest

from airrl.experiments import (SelectionStats, oracle_comparison, selection_statistics,
                               subset_masks, subset_rewards, two_candidate_bandit, upwind_mask)
from airrl.regressor import init_params
from airrl.selector import init_policy


def test_subset_masks_enumerate_everything():
    m = subset_masks(3)
    assert m.shape == (7, 3)
    assert len({tuple(r) for r in m}) == 7 and m.any(axis=1).all()
    assert m[-1].all()
    with pytest.raises(ValueError):
        subset_masks(0)


def test_subset_rewards_and_oracle(small_aqr_config, small_samples, rng):
    aqr = init_params(small_aqr_config, rng, small_samples[0].ctx.stats)
    theta = init_policy(3 * small_aqr_config.z_dim, 8, rng)
    s = small_samples[0]
    r = subset_rewards(s, aqr)
    assert r.shape == (2 ** s.n_candidates - 1,)
    assert np.all((r > 0) & (r <= 1))
    cmp = oracle_comparison(small_samples[:5], aqr, theta)
    assert np.all(cmp.oracle >= cmp.selected) and np.all(cmp.oracle >= cmp.everything)
    assert 0 <= cmp.fraction_not_worse <= 1


def test_subset_rewards_cap(small_aqr_config, small_samples, rng):
    aqr = init_params(small_aqr_config, rng, small_samples[0].ctx.stats)
    with pytest.raises(ValueError, match="cap"):
        subset_rewards(small_samples[0], aqr, max_candidates=2)


def test_upwind_mask_matches_wind_side(small_samples):
    s = small_samples[0]
    _, wd = s.wind()
    source = np.array([np.sin(np.radians(wd)), np.cos(np.radians(wd))])
    rel = s.ctx.station_xy[s.cand_ids] - s.target_xy
    np.testing.assert_array_equal(upwind_mask(s), rel @ source > 0)


def test_selection_statistics_nearest_only(small_samples):
    masks = []
    for s in small_samples:
        m = np.zeros(s.n_candidates, dtype=bool)
        m[s.distance_order()[:2]] = True
        masks.append(m)
    st = selection_statistics(small_samples, masks)
    assert st.terciles[0] == 1.0 and st.terciles[-1] == 0.0 and st.tercile_monotone
    assert st.mean_selected == 2.0 and st.n_samples == len(small_samples)


def test_upwind_ratio_edge_cases():
    assert SelectionStats(0.5, 0.0, np.zeros(3), 1, 1.0).upwind_ratio == float("inf")
    assert SelectionStats(0.6, 0.3, np.zeros(3), 1, 1.0).upwind_ratio == pytest.approx(2.0)


def test_bandit_converges_for_most_seeds():
    outcomes = [two_candidate_bandit(seed) for seed in range(5)]
    assert sum(o.solved() for o in outcomes) >= 4


def test_bandit_with_fallback_credit_collapses():
    o = two_candidate_bandit(0, credit_fallback=True)
    assert o.p_good < 0.5 and o.p_bad < 0.1
