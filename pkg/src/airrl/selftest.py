"""Built-in consistency checks: analytic gradients against central
differences, plus a handful of exact algebraic identities.

Run them with ``airrl selftest`` or call :func:`run_all`.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .baselines import interp_linear
from .evaluation import concentration_to_iaqi
from .neural import (AttentionParams, Dense, LstmLayer, LstmStack, attention_backward,
                     attention_forward, dense_backward, dense_forward, finite_difference,
                     lstm_backward, lstm_forward, soft_update, softmax)
from .regressor import (AqrConfig, batch_loss_and_grads, collate, init_params, load_checkpoint,
                        save_checkpoint)
from .selector import grad_log_pi, init_policy, log_pi, reward

EPS = 1e-5
TOLERANCE = 1e-4
# Gradients smaller than this are compared in absolute terms: a central
# difference cannot resolve them relative to their own size.
GRAD_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def gradient_error(f: Callable[[], float], arrays: dict, grads: dict,
                   max_entries: int | None = None, rng=None) -> float:
    """Worst relative error between ``grads`` and central differences of ``f``.

    ``arrays`` are perturbed in place and restored.  With ``max_entries``
    only that many randomly chosen entries of each array are probed.
    """
    worst = 0.0
    for name, arr in arrays.items():
        flat = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat = np.sort(rng.choice(arr.size, max_entries, replace=False))
        g = np.asarray(grads[name], dtype=float)
        for i in flat:
            idx = np.unravel_index(i, arr.shape) if arr.ndim else ()
            num = finite_difference(f, arr, idx, EPS)
            ana = float(g[idx])
            err = abs(num - ana) / max(abs(num), abs(ana), GRAD_FLOOR)
            worst = max(worst, err)
    return worst


def check_dense(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    layer = Dense(rng.normal(size=(3, 4)), rng.normal(size=3), "tanh")
    x = rng.normal(size=(5, 4))
    c = rng.normal(size=(5, 3))
    f = lambda: float(np.sum(c * dense_forward(layer, x)))
    dx, dW, db = dense_backward(layer, x, c)
    return gradient_error(f, {"W": layer.W, "b": layer.b, "x": x}, {"W": dW, "b": db, "x": dx})


def check_lstm(seed: int = 0, steps: int = 4, hidden: int = 3, layers: int = 2) -> float:
    rng = np.random.default_rng(seed)
    d = 2
    stack = LstmStack([LstmLayer(rng.uniform(-1, 1, (4 * hidden, (d if i == 0 else hidden) + hidden)),
                                 rng.uniform(-1, 1, 4 * hidden)) for i in range(layers)])
    x = rng.normal(size=(steps, d))
    c = rng.normal(size=hidden)
    f = lambda: float(np.sum(c * lstm_forward(stack, x)[0]))
    _, cache = lstm_forward(stack, x)
    dx, lg = lstm_backward(stack, cache, c)
    arrays = {"x": x}
    grads = {"x": dx}
    for i, (layer, (dW, db)) in enumerate(zip(stack.layers, lg)):
        arrays[f"W{i}"], arrays[f"b{i}"] = layer.W, layer.b
        grads[f"W{i}"], grads[f"b{i}"] = dW, db
    return gradient_error(f, arrays, grads)


def check_attention(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    B, N, Z, A = 2, 4, 3, 5
    params = AttentionParams(rng.normal(size=(A, 2 * Z)), rng.normal(size=A),
                             rng.normal(size=A), np.asarray(rng.normal()))
    z_l = rng.normal(size=(B, Z))
    z = rng.normal(size=(B, N, Z))
    mask = np.ones((B, N), dtype=bool)
    mask[1, 2] = False
    c = rng.normal(size=(B, Z))
    f = lambda: float(np.sum(c * attention_forward(params, z_l, z, mask)[1]))
    _, _, cache = attention_forward(params, z_l, z, mask)
    dz_l, dz, g = attention_backward(params, cache, c)
    arrays = {"W1": params.W1, "b1": params.b1, "w2": params.w2, "b2": params.b2,
              "z_l": z_l, "z": z}
    return gradient_error(f, arrays, dict(g, z_l=dz_l, z=dz))


def check_policy(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    theta = init_policy(9, 4, rng)
    states = rng.normal(size=(6, 9))
    actions = rng.integers(0, 2, 6)
    weights = rng.normal(size=6)
    f = lambda: float(np.sum(weights * log_pi(states, actions, theta)))
    return gradient_error(f, theta, grad_log_pi(states, actions, theta, weights))


def tiny_batch(seed: int = 0, T: int = 4):
    """A small real batch from a miniature city, for end-to-end probes."""
    from .features import SplitSpec, build_samples
    from .synthcity import CityConfig, generate_city

    city = generate_city(CityConfig(n_stations=6, n_hours=48, seed=seed, n_poi_per_category=5))
    split = SplitSpec((0, 1, 2, 3), (4, 5))
    samples = build_samples(city, split, T, targets="train", hours=range(T - 1, 48, 11))
    return city, samples


def check_aqr(seed: int = 0, entries: int = 4) -> float:
    """Probe a few entries of every regressor parameter through the full loss."""
    _, samples = tiny_batch(seed)
    cfg = AqrConfig(T=4, lstm_hidden=3, target_spatial=4, station_spatial=4, z_dim=3,
                    att_hidden=4, out_hidden=4, dropout=0.0)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, samples[0].ctx.stats)
    masks = [np.arange(s.n_candidates) % 2 == 0 for s in samples[:3]]
    batch = collate(samples[:3], masks)
    _, grads = batch_loss_and_grads(params, batch)
    f = lambda: batch_loss_and_grads(params, batch)[0]
    return gradient_error(f, params.arrays, grads, entries, rng)


GRADIENT_CHECKS = {
    "dense": check_dense,
    "lstm": check_lstm,
    "attention": check_attention,
    "policy_log_prob": check_policy,
    "aqr_probe": check_aqr,
}


def check_identities() -> list[tuple[str, bool, str]]:
    out = []
    v = interp_linear([(1.0, 40.0), (3.0, 80.0)])
    out.append(("interp_linear", v == 50.0, f"got {v!r}"))
    r = float(reward(1.0, 0.0))
    out.append(("reward", abs(r - math.exp(-1)) < 1e-15, f"got {r!r}"))
    blend = float(soft_update({"w": np.array([0.0])}, {"w": np.array([1.0])}, 0.1)["w"][0])
    out.append(("soft_update", abs(blend - 0.1) < 1e-15, f"got {blend!r}"))
    rng = np.random.default_rng(0)
    s = softmax(rng.normal(size=(50, 7)) * 20, axis=1).sum(axis=1)
    err = float(np.max(np.abs(s - 1)))
    out.append(("softmax_sum", err <= 1e-12, f"max deviation {err:.2e}"))
    joints = [concentration_to_iaqi(c, "pm25") for c in (0, 35, 75, 500, 900)]
    out.append(("iaqi_joints", joints == [0.0, 50.0, 100.0, 500.0, 500.0], f"got {joints}"))
    return out


def check_checkpoint_roundtrip() -> tuple[bool, str]:
    _, samples = tiny_batch(0)
    cfg = AqrConfig(T=4, lstm_hidden=3, target_spatial=4, station_spatial=4, z_dim=3,
                    att_hidden=4, out_hidden=4)
    rng = np.random.default_rng(1)
    aqr = init_params(cfg, rng, samples[0].ctx.stats)
    theta = init_policy(9, 4, rng)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_checkpoint(Path(tmp) / "m.ckpt", aqr, theta)
        back, pol, _ = load_checkpoint(path)
    same = back == aqr and all(np.array_equal(pol[k], theta[k]) and pol[k].shape == theta[k].shape
                               for k in theta)
    return same, "identical" if same else "round-trip changed parameters"


def run_all() -> list[CheckResult]:
    results = []
    for name, fn in GRADIENT_CHECKS.items():
        t0 = time.perf_counter()
        err = fn()
        results.append(CheckResult(f"grad/{name}", err <= TOLERANCE, f"max rel error {err:.2e}",
                                   time.perf_counter() - t0))
    for name, ok, detail in check_identities():
        results.append(CheckResult(f"identity/{name}", bool(ok), detail))
    ok, detail = check_checkpoint_roundtrip()
    results.append(CheckResult("checkpoint/roundtrip", ok, detail))
    return results
