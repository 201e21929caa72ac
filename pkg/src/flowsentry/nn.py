"""LSTM-RNN and MLP classifiers in numpy with hand-written backprop and Adam.

Every LSTM layer runs a single timestep from zero (h, c); stacked LSTM layers
pass h of layer k as the input of layer k+1. Hidden dense layers use ReLU and
the last layer a sigmoid. All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Rng64, rng_new

LSTM = "LSTM"
DENSE = "DENSE"
GATES = ("f", "i", "c", "o")
BCE_EPS = 1e-7

LSTM_LAYERS = [16, 64, 128, 256, 512, 64, 64, 32, 1]
MLP_LAYERS = [16, 32, 128, 512, 32, 1]


class ShapeMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass
class NetworkSpec:
    layer_sizes: list[int]
    layer_kinds: list[str]
    output_activation: str = "sigmoid"

    def __post_init__(self):
        if len(self.layer_kinds) != len(self.layer_sizes) - 1:
            raise ValueError("need one kind per non-input layer")
        if self.layer_sizes[-1] != 1:
            raise ValueError("last layer must have one unit")
        if any(k not in (LSTM, DENSE) for k in self.layer_kinds):
            raise ValueError(f"unknown layer kind in {self.layer_kinds}")

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "layer_kinds": list(self.layer_kinds),
                "output_activation": self.output_activation}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(list(d["layer_sizes"]), list(d["layer_kinds"]), d.get("output_activation", "sigmoid"))


def lstm_spec(sizes=LSTM_LAYERS, n_lstm: int = 2) -> NetworkSpec:
    n = len(sizes) - 1
    return NetworkSpec(list(sizes), [LSTM] * n_lstm + [DENSE] * (n - n_lstm))


def mlp_spec(sizes=MLP_LAYERS) -> NetworkSpec:
    return NetworkSpec(list(sizes), [DENSE] * (len(sizes) - 1))


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    batch_size: int = 560
    epochs: int = 10
    seed: int = 22
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(np.asarray(z, dtype=float))
    z = np.asarray(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- LSTM cell --------------------------------------------------------------

@dataclass
class LstmCellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: Optional[int] = None) -> "LstmCellState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


def _cell_dims(p: dict) -> tuple[int, int]:
    hidden, width = p["w_f"].shape
    return hidden, width - hidden


def lstm_cell_forward(p: dict, prev: LstmCellState, x: np.ndarray):
    """One step of the cell; x is (in,) or (batch, in). Returns (state, cache)."""
    hidden, n_in = _cell_dims(p)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n_in or prev.h.shape[-1] != hidden or prev.c.shape != prev.h.shape:
        raise ShapeMismatch(f"cell expects input {n_in} / hidden {hidden}, got x{x.shape} h{prev.h.shape}")
    for g in GATES:
        if p[f"w_{g}"].shape != (hidden, hidden + n_in) or p[f"b_{g}"].shape != (hidden,):
            raise ShapeMismatch(f"gate {g} parameters have inconsistent shapes")
    hx = np.concatenate([prev.h, x], axis=-1)
    f = sigmoid(hx @ p["w_f"].T + p["b_f"])
    i = sigmoid(hx @ p["w_i"].T + p["b_i"])
    c_new = np.tanh(hx @ p["w_c"].T + p["b_c"])
    o = sigmoid(hx @ p["w_o"].T + p["b_o"])
    c = f * prev.c + i * c_new
    tc = np.tanh(c)
    h = o * tc
    cache = {"hx": hx, "f": f, "i": i, "c_new": c_new, "o": o, "c_prev": prev.c, "tanh_c": tc}
    return LstmCellState(h, c), cache


def lstm_cell_backward(p: dict, cache: dict, dh: np.ndarray, dc: Optional[np.ndarray] = None):
    """Gradients of one cell step given upstream dL/dh (and dL/dc of the new cell state).

    Returns (param grads, dx, dh_prev, dc_prev).
    """
    hidden, _ = _cell_dims(p)
    f, i, g, o, tc = cache["f"], cache["i"], cache["c_new"], cache["o"], cache["tanh_c"]
    d_c = dh * o * (1.0 - tc * tc)
    if dc is not None:
        d_c = d_c + dc
    dz = {
        "f": d_c * cache["c_prev"] * f * (1.0 - f),
        "i": d_c * g * i * (1.0 - i),
        "c": d_c * i * (1.0 - g * g),
        "o": dh * tc * o * (1.0 - o),
    }
    hx = cache["hx"]
    grads = {}
    dhx = 0.0
    for k in GATES:
        z = dz[k]
        if z.ndim == 1:
            grads[f"w_{k}"] = np.outer(z, hx)
            grads[f"b_{k}"] = z.copy()
        else:
            grads[f"w_{k}"] = z.T @ hx
            grads[f"b_{k}"] = z.sum(axis=0)
        dhx = dhx + z @ p[f"w_{k}"]
    return grads, dhx[..., hidden:], dhx[..., :hidden], d_c * f


# --- network ----------------------------------------------------------------

def init_params(spec: NetworkSpec, rng: Rng64) -> list[dict]:
    """Glorot-uniform weights drawn layer by layer (gates in f, i, c, o order), zero biases."""
    params = []
    sizes = spec.layer_sizes
    for n_in, n_out, kind in zip(sizes[:-1], sizes[1:], spec.layer_kinds):
        layer = {}
        if kind == LSTM:
            fan_in = n_out + n_in
            limit = math.sqrt(6.0 / (fan_in + n_out))
            for g in GATES:
                layer[f"w_{g}"] = ((2.0 * rng.uniforms(n_out * fan_in) - 1.0) * limit).reshape(n_out, fan_in)
            for g in GATES:
                layer[f"b_{g}"] = np.zeros(n_out)
        else:
            limit = math.sqrt(6.0 / (n_in + n_out))
            layer["w"] = ((2.0 * rng.uniforms(n_out * n_in) - 1.0) * limit).reshape(n_out, n_in)
            layer["b"] = np.zeros(n_out)
        params.append(layer)
    return params


def param_names(spec: NetworkSpec) -> list[tuple[int, str]]:
    """Flattening order of parameter arrays for checkpoints and gradient checks."""
    names = []
    for li, kind in enumerate(spec.layer_kinds):
        keys = [f"w_{g}" for g in GATES] + [f"b_{g}" for g in GATES] if kind == LSTM else ["w", "b"]
        names.extend((li, k) for k in keys)
    return names


def forward_batch(spec: NetworkSpec, params: list[dict], x: np.ndarray):
    """Probabilities for a (batch, features) matrix, plus caches for backward."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.shape[1] != spec.layer_sizes[0]:
        raise ShapeMismatch(f"expected {spec.layer_sizes[0]} features, got {a.shape[1]}")
    caches = []
    last = len(spec.layer_kinds) - 1
    for li, (kind, p) in enumerate(zip(spec.layer_kinds, params)):
        if kind == LSTM:
            hidden = p["w_f"].shape[0]
            state, cache = lstm_cell_forward(p, LstmCellState.zeros(hidden, a.shape[0]), a)
            caches.append(cache)
            a = state.h
        else:
            if p["w"].shape[1] != a.shape[1]:
                raise ShapeMismatch(f"layer {li} expects {p['w'].shape[1]} inputs, got {a.shape[1]}")
            z = a @ p["w"].T + p["b"]
            caches.append({"a_in": a, "z": z})
            a = sigmoid(z) if li == last else np.maximum(z, 0.0)
    if spec.layer_kinds[-1] == LSTM:
        raise ShapeMismatch("output layer must be dense")
    return a[:, 0], caches


def forward(spec: NetworkSpec, params: list[dict], x) -> float:
    probs, _ = forward_batch(spec, params, np.asarray(x, dtype=float)[None, :])
    return float(probs[0])


def bce_loss(preds, labels) -> float:
    p = np.asarray(preds, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {y.shape} labels")
    if p.size == 0:
        return 0.0
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def backward(spec: NetworkSpec, params: list[dict], x: np.ndarray, y: np.ndarray):
    """Loss and exact gradients of the mean clamped BCE over the batch."""
    probs, caches = forward_batch(spec, params, x)
    y = np.asarray(y, dtype=float)
    loss = bce_loss(probs, y)
    n = probs.shape[0]
    inside = (probs > BCE_EPS) & (probs < 1.0 - BCE_EPS)
    # dL/dz for the output pre-activation; zero where the clamp is active
    delta = np.where(inside, (probs - y) / n, 0.0)[:, None]
    grads: list[dict] = [None] * len(params)
    last = len(params) - 1
    for li in range(last, -1, -1):
        p, cache = params[li], caches[li]
        if spec.layer_kinds[li] == LSTM:
            g, dx, _dh_prev, _dc_prev = lstm_cell_backward(p, cache, delta)
            grads[li] = g
            delta = dx
        else:
            if li != last:
                delta = delta * (cache["z"] > 0)
            grads[li] = {"w": delta.T @ cache["a_in"], "b": delta.sum(axis=0)}
            delta = delta @ p["w"]
    return loss, grads


# --- optimizer and training -------------------------------------------------

@dataclass
class AdamState:
    m: list[dict]
    v: list[dict]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[dict]) -> "AdamState":
        return cls([{k: np.zeros_like(a) for k, a in p.items()} for p in params],
                   [{k: np.zeros_like(a) for k, a in p.items()} for p in params])


def adam_step(state: AdamState, params: list[dict], grads: list[dict], config: TrainConfig) -> list[dict]:
    """One bias-corrected Adam update, in place; returns ``params``."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        for k in p:
            if p[k].shape != g[k].shape:
                raise ShapeMismatch(f"gradient for {k} has shape {g[k].shape}, expected {p[k].shape}")
            m[k] = b1 * m[k] + (1.0 - b1) * g[k]
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k]
            p[k] = p[k] - config.learning_rate * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + config.eps)
    return params


@dataclass
class TrainResult:
    params: list[dict]
    losses: list[float] = field(default_factory=list)


def train(spec: NetworkSpec, config: TrainConfig, x: np.ndarray, y: np.ndarray) -> TrainResult:
    """Mini-batch Adam; reports the sample-weighted mean loss of each epoch.

    The root generator seeded with ``config.seed`` first draws the weights,
    then a child generator reshuffles the rows at the start of every epoch.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise EmptyDataset("no training rows")
    rng = rng_new(config.seed)
    params = init_params(spec, rng)
    shuffle_rng = rng.split()
    state = AdamState.zeros_like(params)
    losses = []
    n = x.shape[0]
    for _epoch in range(config.epochs):
        order = np.asarray(shuffle_rng.permutation(n))
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = backward(spec, params, x[idx], y[idx])
            adam_step(state, params, grads, config)
            total += loss * len(idx)
        losses.append(total / n)
    return TrainResult(params, losses)


def predict_proba(spec: NetworkSpec, params: list[dict], x: np.ndarray) -> np.ndarray:
    return forward_batch(spec, params, x)[0]


def predict(params: list[dict], spec: NetworkSpec, x, threshold: float = 0.5):
    """Class 1 iff probability >= threshold; accepts one row or a matrix."""
    x = np.asarray(x, dtype=float)
    probs = predict_proba(spec, params, x)
    labels = (probs >= threshold).astype(int)
    return int(labels[0]) if x.ndim == 1 else labels


def params_to_dict(spec: NetworkSpec, params: list[dict]) -> list[dict]:
    return [{"layer": li, "name": k, "shape": list(params[li][k].shape),
             "data": params[li][k].ravel().tolist()} for li, k in param_names(spec)]


def params_from_dict(spec: NetworkSpec, entries: list[dict]) -> list[dict]:
    params: list[dict] = [{} for _ in spec.layer_kinds]
    for e in entries:
        params[e["layer"]][e["name"]] = np.asarray(e["data"], dtype=float).reshape(e["shape"])
    return params
