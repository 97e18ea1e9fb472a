"""Station selector: a logistic keep/drop policy over candidate stations,
trained with REINFORCE on a single delayed reward per episode.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import Sample
from .neural import Params, all_finite, copy_params, sigmoid, soft_update, uniform_init
from .regressor import AqrParams, NumericError, collate, encode_batch, head_forward

P_CLAMP = 1e-8
EXPORT_COLUMNS = ("sample_id", "t", "station_id", "distance_km", "bearing_sector", "p",
                  "action", "wind_speed", "wind_dir_deg")

__all__ = ["EXPORT_COLUMNS", "Episode", "build_state", "init_policy", "policy_prob",
           "policy_logit", "grad_log_pi", "reward", "reinforce_update", "soft_update",
           "sample_episode", "sample_episodes", "select_inference", "select_inference_batch",
           "write_selection_csv", "selection_rows"]


def init_policy(state_dim: int, hidden: int, rng: np.random.Generator,
                scale: float = 1.0) -> Params:
    return {
        "W1": uniform_init((hidden, state_dim), scale, rng),
        "b1": uniform_init((hidden,), scale, rng),
        "w": uniform_init((hidden,), scale, rng),
        "b": uniform_init((), scale, rng),
    }


def validate_policy(theta: Params, state_dim: int | None = None) -> None:
    h = theta["W1"].shape[0]
    if theta["b1"].shape != (h,) or theta["w"].shape != (h,) or np.shape(theta["b"]) != ():
        raise ValueError("inconsistent policy shapes")
    if state_dim is not None and theta["W1"].shape[1] != state_dim:
        raise ValueError(f"policy expects states of width {theta['W1'].shape[1]}, got {state_dim}")
    if not all_finite(theta):
        raise ValueError("non-finite policy parameters")


def build_state(z_l, z_current, selected_z) -> np.ndarray:
    """``z_l`` + current candidate + mean of already selected (zeros if none)."""
    z_l = np.asarray(z_l, dtype=float)
    sel = np.asarray(selected_z, dtype=float).reshape(-1, z_l.shape[-1])
    mean = sel.mean(axis=0) if len(sel) else np.zeros_like(z_l)
    return np.concatenate([z_l, np.asarray(z_current, dtype=float), mean])


def _hidden(states, theta: Params):
    pre = states @ theta["W1"].T + theta["b1"]
    return pre, np.maximum(pre, 0.0)


def policy_logit(states, theta: Params) -> np.ndarray:
    _, h = _hidden(np.asarray(states, dtype=float), theta)
    return h @ theta["w"] + theta["b"]


def policy_prob(state, theta: Params):
    """Probability of keeping the station; works on (S,) or (..., S)."""
    p = sigmoid(policy_logit(state, theta))
    return float(p) if np.ndim(p) == 0 else p


def log_pi(states, actions, theta: Params) -> np.ndarray:
    p = np.clip(sigmoid(policy_logit(states, theta)), P_CLAMP, 1 - P_CLAMP)
    a = np.asarray(actions, dtype=float)
    return a * np.log(p) + (1 - a) * np.log(1 - p)


def grad_log_pi(states, actions, theta: Params, weights=None) -> Params:
    """``sum_i weights_i * grad log pi(s_i, a_i)`` for states (n, S)."""
    s = np.asarray(states, dtype=float).reshape(-1, theta["W1"].shape[1])
    a = np.asarray(actions, dtype=float).reshape(-1)
    w = np.ones(len(a)) if weights is None else np.broadcast_to(
        np.asarray(weights, dtype=float), a.shape)
    pre, h = _hidden(s, theta)
    p = sigmoid(h @ theta["w"] + theta["b"])
    dlogit = w * (a - p)
    dh = dlogit[:, None] * theta["w"]
    dpre = dh * (pre > 0)
    return {
        "W1": dpre.T @ s,
        "b1": dpre.sum(axis=0),
        "w": dlogit @ h,
        "b": np.asarray(dlogit.sum()),
    }


def reward(y, truth):
    """``exp(-(y - truth)^2)``; pass values on the normalized IAQI scale."""
    return np.exp(-(np.asarray(y, dtype=float) - np.asarray(truth, dtype=float)) ** 2)


@dataclass
class Episode:
    order: np.ndarray               # candidate positions in visiting order
    states: np.ndarray              # (n, S)
    actions: np.ndarray             # (n,) 0/1
    log_probs: np.ndarray           # (n,)
    probs: np.ndarray               # (n,) keep probability at each step
    reward: float                   # terminal reward
    selected: np.ndarray            # candidate positions used for the prediction
    y: float = float("nan")         # normalized prediction

    @property
    def step_rewards(self) -> np.ndarray:
        r = np.zeros(len(self.actions))
        r[-1] = self.reward
        return r


def reinforce_update(episodes: Iterable[Episode], theta: Params, lr: float,
                     baseline: float = 0.0) -> Params:
    """Gradient ascent on ``sum_i (r - baseline) * log pi(s_i, a_i)``; returns new params."""
    total = {k: np.zeros_like(v) for k, v in theta.items()}
    for ep in episodes:
        g = grad_log_pi(ep.states, ep.actions, theta, ep.reward - baseline)
        for k in total:
            total[k] += g[k]
    if not all_finite(total):
        raise NumericError("non-finite policy gradient")
    if lr == 0.0:
        return copy_params(theta)
    return {k: theta[k] + lr * total[k] for k in theta}


# ---------------------------------------------------------------- batched rollouts

def _orders(samples: Sequence[Sample], N: int) -> np.ndarray:
    order = np.zeros((len(samples), N), dtype=int)
    for b, s in enumerate(samples):
        o = s.distance_order()
        order[b, :len(o)] = o
        order[b, len(o):] = np.arange(len(o), N)
    return order


def rollout(z_l, z_s, valid, order, theta: Params, rng: np.random.Generator | None = None):
    """Visit candidates in ``order`` and decide keep/drop for each.

    With ``rng`` actions are sampled; without it they are greedy
    (``p >= 0.5``).  Returns ``(states (B,N,S), actions (B,N), probs (B,N),
    mask (B,N))`` indexed by candidate position; ``mask`` includes the
    fallback station for episodes that kept nothing.
    """
    B, N, Z = z_s.shape
    states = np.zeros((B, N, 3 * Z))
    actions = np.zeros((B, N))
    probs = np.zeros((B, N))
    total = np.zeros((B, Z))
    count = np.zeros(B)
    rows = np.arange(B)
    u = rng.random((B, N)) if rng is not None else None
    for i in range(N):
        pos = order[:, i]
        live = valid[rows, pos]
        cur = z_s[rows, pos]
        mean = np.where(count[:, None] > 0, total / np.maximum(count, 1)[:, None], 0.0)
        s = np.concatenate([z_l, cur, mean], axis=1)
        p = sigmoid(policy_logit(s, theta))
        a = (u[:, i] < p) if u is not None else (p >= 0.5)
        a = a & live
        states[rows, pos] = s
        probs[rows, pos] = np.where(live, p, 0.0)
        actions[rows, pos] = a
        total += a[:, None] * cur
        count += a
    mask = actions.astype(bool)
    empty = ~mask.any(axis=1)
    if empty.any():
        best = np.argmax(np.where(valid, probs, -1.0), axis=1)
        mask[empty, best[empty]] = True
    return states, actions, probs, mask


def sample_episodes(samples: Sequence[Sample], aqr: AqrParams, theta_target: Params,
                    rng: np.random.Generator, reward_scale: float = 1.0) -> list[Episode]:
    """Roll out the target policy on each sample and score with the AQR."""
    batch = collate(samples)
    z_l, z_s = encode_batch(aqr, batch)
    order = _orders(samples, z_s.shape[1])
    states, actions, probs, mask = rollout(z_l, z_s, batch.valid, order, theta_target, rng)
    y, _ = head_forward(aqr, z_l, z_s, mask & batch.valid)
    r = reward(reward_scale * y, reward_scale * batch.y)
    eps = []
    for b, s in enumerate(samples):
        o = order[b, :s.n_candidates]
        a = actions[b, o]
        p = np.clip(probs[b, o], P_CLAMP, 1 - P_CLAMP)
        eps.append(Episode(o, states[b, o], a, a * np.log(p) + (1 - a) * np.log(1 - p),
                           probs[b, o], float(r[b]), np.flatnonzero(mask[b, :s.n_candidates]),
                           float(y[b])))
    return eps


def sample_episode(sample: Sample, aqr: AqrParams, theta_target: Params,
                   rng: np.random.Generator, reward_scale: float = 1.0) -> Episode:
    return sample_episodes([sample], aqr, theta_target, rng, reward_scale)[0]


def select_inference_batch(samples: Sequence[Sample], aqr: AqrParams, theta: Params):
    """Greedy masks (B, N) plus the keep probabilities, for many samples."""
    batch = collate(samples)
    z_l, z_s = encode_batch(aqr, batch)
    order = _orders(samples, z_s.shape[1])
    _, _, probs, mask = rollout(z_l, z_s, batch.valid, order, theta)
    return mask & batch.valid, probs


def select_inference(sample: Sample, aqr: AqrParams, theta: Params) -> np.ndarray:
    """Deterministic selection: keep iff ``p >= 0.5``, else the single argmax-p station."""
    mask, _ = select_inference_batch([sample], aqr, theta)
    return np.flatnonzero(mask[0, :sample.n_candidates])


# ---------------------------------------------------------------- export

def selection_rows(sample_id: int, sample: Sample, probs, actions) -> list[tuple]:
    ws, wd = sample.wind()
    return [(sample_id, sample.t, int(sample.cand_ids[j]), float(sample.cand_dist[j]),
             int(sample.cand_sector[j]), float(probs[j]), int(actions[j]), ws, wd)
            for j in range(sample.n_candidates)]


def write_selection_csv(rows: Iterable[tuple], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXPORT_COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return path
