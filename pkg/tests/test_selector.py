import math

import numpy as np
import pytest

from airrl.regressor import init_params
from airrl.selector import (Episode, build_state, grad_log_pi, init_policy, log_pi, policy_prob,
                            reinforce_update, reward, sample_episode, select_inference,
                            select_inference_batch, write_selection_csv, selection_rows)


def _bandit_run(seed, updates=500, lr=0.1):
    """Keep is right iff the first state coordinate is positive."""
    rng = np.random.default_rng(seed)
    theta = init_policy(6, 16, rng, scale=0.3)
    for _ in range(updates):
        s = rng.normal(size=6)
        p = policy_prob(s, theta)
        a = float(rng.random() < p)
        r = float(a == (s[0] > 0))
        ep = Episode(np.zeros(1, int), s[None], np.array([a]), np.zeros(1), np.array([p]), r,
                     np.zeros(1, int))
        theta = reinforce_update([ep], theta, lr, baseline=0.5)
    test = np.random.default_rng(seed + 100).normal(size=(500, 6))
    return np.mean((policy_prob(test, theta) >= 0.5) == (test[:, 0] > 0))


def test_contextual_bandit_converges():
    wins = sum(_bandit_run(seed) > 0.9 for seed in range(5))
    assert wins >= 4


def test_reward_examples():
    assert reward(1.0, 0.0) == pytest.approx(math.exp(-1))
    assert reward(0.3, 0.3) == 1.0
    assert reward(-2.0, 0.0) == pytest.approx(math.exp(-4))


def test_build_state_layout():
    s = build_state([1, 2], [3, 4], [[1, 1], [3, 5]])
    assert s.tolist() == [1, 2, 3, 4, 2, 3]
    assert build_state([1, 2], [3, 4], []).tolist() == [1, 2, 3, 4, 0, 0]


def test_grad_log_pi_matches_finite_difference(rng):
    theta = init_policy(5, 4, rng)
    s = rng.normal(size=(3, 5))
    a = np.array([1, 0, 1])
    g = grad_log_pi(s, a, theta)
    eps = 1e-6
    theta["b"] = theta["b"] + eps
    up = log_pi(s, a, theta).sum()
    theta["b"] = theta["b"] - 2 * eps
    down = log_pi(s, a, theta).sum()
    assert float(g["b"]) == pytest.approx((up - down) / (2 * eps), rel=1e-6)


def test_zero_lr_and_zero_advantage_leave_policy(rng):
    theta = init_policy(4, 3, rng)
    ep = Episode(np.zeros(2, int), rng.normal(size=(2, 4)), np.array([1.0, 0.0]), np.zeros(2),
                 np.full(2, 0.5), 0.7, np.zeros(1, int))
    for new in (reinforce_update([ep], theta, 0.0), reinforce_update([ep], theta, 1.0, 0.7)):
        for k in theta:
            np.testing.assert_array_equal(new[k], theta[k])


def test_large_bias_selects_everything(small_aqr_config, small_samples, rng):
    aqr = init_params(small_aqr_config, rng, small_samples[0].ctx.stats)
    theta = init_policy(3 * small_aqr_config.z_dim, 8, rng)
    theta["b"] = np.asarray(1000.0)
    for s in small_samples[:4]:
        assert select_inference(s, aqr, theta).tolist() == list(range(s.n_candidates))


def test_empty_selection_falls_back_to_argmax(small_aqr_config, small_samples, rng):
    aqr = init_params(small_aqr_config, rng, small_samples[0].ctx.stats)
    theta = init_policy(3 * small_aqr_config.z_dim, 8, rng)
    theta["b"] = np.asarray(-1000.0)
    theta["w"] = np.abs(theta["w"]) * 1e-3
    mask, probs = select_inference_batch(small_samples[:4], aqr, theta)
    for b, s in enumerate(small_samples[:4]):
        chosen = np.flatnonzero(mask[b])
        assert len(chosen) == 1
        assert chosen[0] == np.argmax(probs[b, :s.n_candidates])


def test_selection_is_deterministic(small_aqr_config, small_samples, rng):
    aqr = init_params(small_aqr_config, rng, small_samples[0].ctx.stats)
    theta = init_policy(3 * small_aqr_config.z_dim, 8, rng)
    a, _ = select_inference_batch(small_samples, aqr, theta)
    b, _ = select_inference_batch(small_samples, aqr, theta)
    np.testing.assert_array_equal(a, b)


def test_episode_visits_candidates_nearest_first(small_aqr_config, small_samples, rng):
    aqr = init_params(small_aqr_config, rng, small_samples[0].ctx.stats)
    theta = init_policy(3 * small_aqr_config.z_dim, 8, rng)
    s = small_samples[2]
    ep = sample_episode(s, aqr, theta, np.random.default_rng(5))
    assert np.all(np.diff(s.cand_dist[ep.order]) >= 0)
    assert ep.step_rewards[:-1].sum() == 0 and ep.step_rewards[-1] == ep.reward
    assert 0 < ep.reward <= 1 and len(ep.selected) >= 1
    again = sample_episode(s, aqr, theta, np.random.default_rng(5))
    np.testing.assert_array_equal(ep.actions, again.actions)


def test_selection_csv(tmp_path, small_samples):
    s = small_samples[0]
    n = s.n_candidates
    path = write_selection_csv(selection_rows(0, s, np.full(n, 0.5), np.ones(n, int)),
                               tmp_path / "sel.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("sample_id,t,station_id") and len(lines) == n + 1
