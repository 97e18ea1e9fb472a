"""Dense, LSTM and attention-pooling layers with hand-written backward passes.

Everything runs in float64. Forward functions accept arbitrary leading batch
dimensions where that is cheap to support.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ACTIVATIONS = ("relu", "identity", "sigmoid", "tanh")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def relu(x):
    return np.maximum(x, 0.0)


def softmax(x, axis: int = -1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0."""
    x = np.asarray(x, dtype=float)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def _act(pre, activation):
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "identity":
        return pre
    if activation == "sigmoid":
        return sigmoid(pre)
    if activation == "tanh":
        return np.tanh(pre)
    raise ValueError(f"unknown activation {activation!r}")


def _act_grad(pre, out, activation):
    if activation == "relu":
        return (pre > 0).astype(float)
    if activation == "identity":
        return np.ones_like(pre)
    if activation == "sigmoid":
        return out * (1.0 - out)
    if activation == "tanh":
        return 1.0 - out * out
    raise ValueError(f"unknown activation {activation!r}")


# ---------------------------------------------------------------- dense

@dataclass
class Dense:
    W: np.ndarray                   # (out, in)
    b: np.ndarray                   # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent dense shapes {self.W.shape}, {self.b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def _check_in(layer: Dense, x):
    if np.shape(x)[-1] != layer.W.shape[1]:
        raise ValueError(f"dense input has width {np.shape(x)[-1]}, expected {layer.W.shape[1]}")


def dense_forward(layer: Dense, x) -> np.ndarray:
    _check_in(layer, x)
    return _act(np.asarray(x, dtype=float) @ layer.W.T + layer.b, layer.activation)


def dense_backward(layer: Dense, x, dy):
    """Returns ``(dx, dW, db)`` for upstream gradient ``dy``."""
    _check_in(layer, x)
    x = np.asarray(x, dtype=float)
    pre = x @ layer.W.T + layer.b
    out = _act(pre, layer.activation)
    dpre = dy * _act_grad(pre, out, layer.activation)
    n_out, n_in = layer.W.shape
    dW = dpre.reshape(-1, n_out).T @ x.reshape(-1, n_in)
    db = dpre.reshape(-1, n_out).sum(axis=0)
    return dpre @ layer.W, dW, db


# ---------------------------------------------------------------- LSTM

@dataclass
class LstmLayer:
    """Gate rows are ordered input, forget, output, candidate."""
    W: np.ndarray                   # (4H, d + H) acting on [x_t, h_{t-1}]
    b: np.ndarray                   # (4H,)

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[1] - self.hidden


@dataclass
class LstmStack:
    layers: list[LstmLayer]

    def __post_init__(self):
        d = None
        for layer in self.layers:
            H = layer.hidden
            if layer.W.shape[0] != 4 * H or layer.b.shape != (4 * H,):
                raise ValueError("inconsistent LSTM gate shapes")
            if d is not None and layer.input_dim != d:
                raise ValueError("LSTM layer input does not match previous hidden size")
            d = H

    @property
    def hidden(self) -> int:
        return self.layers[-1].hidden


@dataclass
class LstmCache:
    squeeze: bool
    layers: list[dict] = field(default_factory=list)


def _lstm_layer_forward(layer: LstmLayer, x):
    B, T, d = x.shape
    H = layer.hidden
    Wx, Wh = layer.W[:, :d], layer.W[:, d:]
    xproj = (x.reshape(B * T, d) @ Wx.T).reshape(B, T, 4 * H) + layer.b
    hs = np.zeros((B, T + 1, H))
    cs = np.zeros((B, T + 1, H))
    gates = np.empty((B, T, 4 * H))
    tcs = np.empty((B, T, H))
    for t in range(T):
        a = xproj[:, t] + hs[:, t] @ Wh.T
        g = np.empty_like(a)
        g[:, :3 * H] = sigmoid(a[:, :3 * H])
        g[:, 3 * H:] = np.tanh(a[:, 3 * H:])
        i, f, o, c_hat = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        cs[:, t + 1] = f * cs[:, t] + i * c_hat
        tcs[:, t] = np.tanh(cs[:, t + 1])
        hs[:, t + 1] = o * tcs[:, t]
        gates[:, t] = g
    return hs, {"x": x, "hs": hs, "cs": cs, "gates": gates, "tcs": tcs}


def lstm_forward(stack: LstmStack, sequence):
    """Run the stack from zero states; returns ``(h_T, cache)``.

    ``sequence`` is (T, d) or (B, T, d); ``h_T`` is the top layer's last
    hidden state, (H,) or (B, H).
    """
    x = np.asarray(sequence, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError("LSTM needs a non-empty (T, d) or (B, T, d) sequence")
    if x.shape[2] != stack.layers[0].input_dim:
        raise ValueError(f"LSTM input width {x.shape[2]}, expected {stack.layers[0].input_dim}")
    cache = LstmCache(squeeze)
    h = x
    for layer in stack.layers:
        hs, c = _lstm_layer_forward(layer, h)
        cache.layers.append(c)
        h = hs[:, 1:]
    out = h[:, -1]
    return (out[0] if squeeze else out), cache


def _lstm_layer_backward(layer: LstmLayer, c: dict, dh_seq):
    x, hs, cs, gates, tcs = c["x"], c["hs"], c["cs"], c["gates"], c["tcs"]
    B, T, d = x.shape
    H = layer.hidden
    Wx, Wh = layer.W[:, :d], layer.W[:, d:]
    da = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, o, c_hat = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        dh = dh_seq[:, t] + dh_next
        tc = tcs[:, t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dai = da[:, t]
        dai[:, :H] = dc * c_hat * i * (1.0 - i)
        dai[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
        dai[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dai[:, 3 * H:] = dc * i * (1.0 - c_hat * c_hat)
        dc_next = dc * f
        dh_next = dai @ Wh
    flat = da.reshape(B * T, 4 * H)
    dWx = flat.T @ x.reshape(B * T, d)
    dWh = flat.T @ hs[:, :-1].reshape(B * T, H)
    db = flat.sum(axis=0)
    dx = (flat @ Wx).reshape(B, T, d)
    return dx, np.concatenate([dWx, dWh], axis=1), db


def lstm_backward(stack: LstmStack, cache: LstmCache, dh_T):
    """Gradients for upstream ``dh_T`` on the final top-layer state.

    Returns ``(dx, [(dW, db) per layer])`` with ``dx`` shaped like the input.
    """
    dh_T = np.asarray(dh_T, dtype=float)
    if cache.squeeze:
        dh_T = dh_T[None]
    top = cache.layers[-1]
    B, T = top["x"].shape[:2]
    dh_seq = np.zeros((B, T, stack.layers[-1].hidden))
    dh_seq[:, -1] = dh_T
    grads = []
    for layer, c in zip(reversed(stack.layers), reversed(cache.layers)):
        dh_seq, dW, db = _lstm_layer_backward(layer, c, dh_seq)
        grads.append((dW, db))
    grads.reverse()
    return (dh_seq[0] if cache.squeeze else dh_seq), grads


# ---------------------------------------------------------------- attention

@dataclass
class AttentionParams:
    W1: np.ndarray                  # (A, 2Z) acting on [z_l, z_i]
    b1: np.ndarray                  # (A,)
    w2: np.ndarray                  # (A,)
    b2: np.ndarray                  # () scalar

    def __post_init__(self):
        A = self.W1.shape[0]
        if self.W1.shape[1] % 2 or self.b1.shape != (A,) or self.w2.shape != (A,) \
                or np.shape(self.b2) != ():
            raise ValueError("inconsistent attention shapes")

    @property
    def z_dim(self) -> int:
        return self.W1.shape[1] // 2


def attention_forward(params: AttentionParams, z_l, z, mask=None):
    """Batched pooling: ``z_l`` (B, Z), ``z`` (B, N, Z), ``mask`` (B, N) bool.

    Returns ``(weights (B, N), pooled (B, Z), cache)``.
    """
    z_l = np.asarray(z_l, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape[1] == 0:
        raise ValueError("attention over an empty station list")
    if mask is None:
        mask = np.ones(z.shape[:2], dtype=bool)
    if not np.all(mask.any(axis=1)):
        raise ValueError("attention over an empty selection")
    Z = params.z_dim
    pre = (z_l @ params.W1[:, :Z].T)[:, None, :] + z @ params.W1[:, Z:].T + params.b1
    h = np.maximum(pre, 0.0)
    logits = h @ params.w2 + params.b2
    a = softmax(logits, axis=1, mask=mask)
    pooled = np.einsum("bn,bnz->bz", a, z)
    return a, pooled, (z_l, z, mask, pre, h, a)


def attention_backward(params: AttentionParams, cache, dpooled):
    """Returns ``(dz_l, dz, grads)`` with grads keyed W1, b1, w2, b2."""
    z_l, z, mask, pre, h, a = cache
    Z = params.z_dim
    da = np.einsum("bz,bnz->bn", dpooled, z)
    dz = a[:, :, None] * dpooled[:, None, :]
    dlogit = a * (da - np.sum(a * da, axis=1, keepdims=True))
    dh = dlogit[:, :, None] * params.w2
    dpre = dh * (pre > 0)
    A = params.W1.shape[0]
    dW1_l = dpre.sum(axis=1).T @ z_l
    dW1_s = dpre.reshape(-1, A).T @ z.reshape(-1, Z)
    grads = {
        "W1": np.concatenate([dW1_l, dW1_s], axis=1),
        "b1": dpre.sum(axis=(0, 1)),
        "w2": np.einsum("bn,bna->a", dlogit, h),
        "b2": np.asarray(dlogit.sum()),
    }
    dz_l = dpre.sum(axis=1) @ params.W1[:, :Z]
    dz = dz + dpre @ params.W1[:, Z:]
    return dz_l, dz, grads


def attention_pool(params: AttentionParams, z_l, stations):
    """Single-instance pooling; returns ``(weights, pooled)``."""
    z = np.asarray(stations, dtype=float)
    if z.ndim != 2 or len(z) == 0:
        raise ValueError("attention_pool needs a non-empty list of station vectors")
    a, pooled, _ = attention_forward(params, np.asarray(z_l, dtype=float)[None], z[None])
    return a[0], pooled[0]


# ---------------------------------------------------------------- dropout

def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout; identity at inference or when ``rate == 0``."""
    x = np.asarray(x, dtype=float)
    if not training or rate == 0.0:
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        return x.copy()
    return x * dropout_mask(x.shape, rate, rng)


# ---------------------------------------------------------------- params & optimizers

Params = dict[str, np.ndarray]


def uniform_init(shape, scale: float, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def soft_update(target: Params, live: Params, tau: float) -> Params:
    """Elementwise ``tau * live + (1 - tau) * target`` as a new dict."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    if target.keys() != live.keys():
        raise ValueError("parameter sets differ")
    if tau == 1.0:
        return {k: live[k].copy() for k in live}
    if tau == 0.0:
        return {k: target[k].copy() for k in target}
    return {k: tau * live[k] + (1.0 - tau) * target[k] for k in target}


def copy_params(p: Params) -> Params:
    return {k: v.copy() for k, v in p.items()}


def all_finite(grads: Params) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: Params, ascent: bool = False) -> None:
        sign = 1.0 if ascent else -1.0
        for k, g in grads.items():
            params[k] += sign * self.lr * g

    def state_dict(self) -> dict:
        return {"kind": "sgd", "lr": self.lr}


class Adam:
    """Per-parameter first/second moment estimates with bias correction."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params, ascent: bool = False) -> None:
        if self.lr == 0.0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        sign = 1.0 if ascent else -1.0
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] += sign * self.lr * corr * self.m[k] / (np.sqrt(self.v[k]) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------- gradient checking

def finite_difference(f: Callable[[], float], array: np.ndarray, index, eps: float = 1e-5) -> float:
    """Central difference of ``f()`` w.r.t. ``array[index]`` (perturbed in place)."""
    old = array[index]
    array[index] = old + eps
    fp = f()
    array[index] = old - eps
    fm = f()
    array[index] = old
    return (fp - fm) / (2 * eps)


def relative_error(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
