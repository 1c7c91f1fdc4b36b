"""Complex-valued spatio-temporal GCN with hand-written backpropagation.

Gradients of the real loss with respect to a complex array p are stored as
one complex array ``dL/dRe(p) + 1j * dL/dIm(p)`` (twice the conjugate
Wirtinger derivative). Real parameters get ordinary real gradients.
Every layer function accepts an optional leading batch axis.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergenceError, StaleCacheError

CHECKPOINT_FORMAT = "cplx-stgcn-checkpoint"
CHECKPOINT_VERSION = 1

# name -> gradient array, same shape as the parameter
GradientSet = dict


def crelu(z):
    z = np.asarray(z)
    return np.maximum(z.real, 0) + 1j * np.maximum(z.imag, 0)


def _crelu_grad(g, z):
    return np.where(z.real > 0, g.real, 0.0) + 1j * np.where(z.imag > 0, g.imag, 0.0)


def split_tanh(z):
    return np.tanh(z.real) + 1j * np.tanh(z.imag)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def temporal_conv(gamma, X, bias=None):
    """X (.., V, T) @ gamma (T, K_t) -> (.., V, K_t)."""
    if X.shape[-1] != gamma.shape[0]:
        raise ValueError(f"window width {X.shape[-1]} does not match kernel height {gamma.shape[0]}")
    out = X @ gamma
    return out if bias is None else out + bias


def _graph_poly(S, taps, Xbar):
    # sum_k S^k Xbar H_k, Horner over k
    K = taps.shape[0]
    acc = Xbar @ taps[K - 1]
    for k in range(K - 2, -1, -1):
        acc = S @ acc + Xbar @ taps[k]
    return acc


def graph_conv(S, taps, Xbar, bias=None):
    """CReLU(sum_{k<K} S^k Xbar H_k + b); taps has shape (K, K_t, G)."""
    S = np.asarray(S)
    if S.shape[0] != Xbar.shape[-2] or taps.shape[1] != Xbar.shape[-1]:
        raise ValueError("graph_conv shape mismatch")
    Z = _graph_poly(S, taps, Xbar)
    if bias is not None:
        Z = Z + bias
    return crelu(Z)


@dataclass
class StgcnConfig:
    n_nodes: int
    window: int = 10            # T
    temporal_channels: int = 10  # K_t
    graph_taps: int = 5         # K: powers S^0 .. S^{K-1}
    graph_channels: int = 10    # G
    hidden: tuple = (512, 512)
    head: str = "regression"    # regression | classification
    n_outputs: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(w) for w in self.hidden)
        if self.head not in ("regression", "classification"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.n_outputs is None:
            self.n_outputs = self.n_nodes
        for name in ("n_nodes", "window", "temporal_channels", "graph_taps", "graph_channels", "n_outputs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def param_shapes(self) -> dict:
        V, T, Kt, K, G = self.n_nodes, self.window, self.temporal_channels, self.graph_taps, self.graph_channels
        shapes = {
            "gamma": (T, Kt), "gamma_b": (Kt,),
            "taps": (K, Kt, G), "graph_b": (G,),
        }
        width = V * G
        for i, w in enumerate(self.hidden):
            shapes[f"dense{i}_w"] = (w, width)
            shapes[f"dense{i}_b"] = (w,)
            width = w
        in_head = width if self.head == "regression" else 2 * width
        shapes["head_w"] = (self.n_outputs, in_head)
        shapes["head_b"] = (self.n_outputs,)
        return shapes

    def is_real(self, name: str) -> bool:
        return self.head == "classification" and name.startswith("head_")


@dataclass
class StgcnModel:
    config: StgcnConfig
    params: dict
    # fixed affine maps: inputs are normalised as (X - offset) / scale,
    # regression outputs are offset + scale * split_tanh(.)
    input_offset: np.ndarray | float = 0.0
    input_scale: float = 1.0
    target_offset: np.ndarray | float = 0.0
    target_scale: float = 1.0
    version: int = field(default=0, compare=False)

    @classmethod
    def init(cls, config: StgcnConfig, seed: int = 0) -> "StgcnModel":
        """Glorot-style init: each real plane uniform with variance 1/(fan_in + fan_out)."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in config.param_shapes().items():
            if name.endswith("_b"):
                dtype = float if config.is_real(name) else complex
                params[name] = np.zeros(shape, dtype=dtype)
                continue
            if name == "gamma":
                fan_in, fan_out = shape
            elif name == "taps":
                fan_in, fan_out = shape[0] * shape[1], shape[2]
            else:
                fan_out, fan_in = shape
            a = np.sqrt(3.0 / (fan_in + fan_out))
            if config.is_real(name):
                params[name] = rng.uniform(-a, a, shape)
            else:
                params[name] = rng.uniform(-a, a, shape) + 1j * rng.uniform(-a, a, shape)
        return cls(config, params)

    def zeros_like(self) -> "StgcnModel":
        m = self.copy()
        for k in m.params:
            m.params[k] = np.zeros_like(m.params[k])
        return m

    def copy(self) -> "StgcnModel":
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return sum(p.size * (1 if np.isrealobj(p) else 2) for p in self.params.values())


def forward(model: StgcnModel, S, X):
    """Run the network on one window (V, T) or a batch (B, V, T).

    Returns (prediction, cache). Regression predictions are complex (.., n_out),
    classification predictions are probabilities in (0, 1).
    """
    p, cfg = model.params, model.config
    X = np.asarray(X)
    single = X.ndim == 2
    Xb = X[None] if single else X
    if Xb.shape[1:] != (cfg.n_nodes, cfg.window):
        raise ValueError(f"expected window of shape ({cfg.n_nodes}, {cfg.window}), got {Xb.shape[1:]}")
    S = np.asarray(S)
    off = np.asarray(model.input_offset)
    if off.ndim == 1:
        off = off[:, None]
    Xn = (Xb - off) / model.input_scale
    Xbar = temporal_conv(p["gamma"], Xn, p["gamma_b"])
    Z = _graph_poly(S, p["taps"], Xbar) + p["graph_b"]
    B = Xb.shape[0]
    h = crelu(Z).reshape(B, -1)
    acts, pres = [h], []
    for i in range(len(cfg.hidden)):
        a = h @ p[f"dense{i}_w"].T + p[f"dense{i}_b"]
        h = crelu(a)
        pres.append(a)
        acts.append(h)
    if cfg.head == "regression":
        o = h @ p["head_w"].T + p["head_b"]
        y = split_tanh(o)
        pred = model.target_offset + model.target_scale * y
    else:
        r = np.concatenate([h.real, h.imag], axis=1)
        o = r @ p["head_w"].T + p["head_b"]
        y = sigmoid(o)
        pred = y
    if not np.all(np.isfinite(pred)):
        raise DivergenceError("non-finite activation in forward pass")
    cache = {"version": model.version, "S": S, "Xn": Xn, "Xbar": Xbar, "Z": Z,
             "acts": acts, "pres": pres, "y": y, "single": single}
    return (pred[0] if single else pred), cache


def backward(model: StgcnModel, cache: dict, grad_pred) -> GradientSet:
    """Gradients of a scalar loss given dL/dprediction (same shape as prediction)."""
    if cache.get("version") != model.version:
        raise StaleCacheError("cache was produced before the last parameter update")
    p, cfg = model.params, model.config
    g = np.asarray(grad_pred)
    if cache["single"]:
        g = g[None]
    grads: GradientSet = {}
    y = cache["y"]
    h = cache["acts"][-1]
    if cfg.head == "regression":
        g = model.target_scale * g
        g_o = g.real * (1 - y.real ** 2) + 1j * g.imag * (1 - y.imag ** 2)
        grads["head_w"] = g_o.T @ h.conj()
        grads["head_b"] = g_o.sum(axis=0)
        g_h = g_o @ p["head_w"].conj()
    else:
        g_o = np.real(g) * y * (1 - y)
        r = np.concatenate([h.real, h.imag], axis=1)
        grads["head_w"] = g_o.T @ r
        grads["head_b"] = g_o.sum(axis=0)
        g_r = g_o @ p["head_w"]
        w = h.shape[1]
        g_h = g_r[:, :w] + 1j * g_r[:, w:]

    for i in reversed(range(len(cfg.hidden))):
        g_a = _crelu_grad(g_h, cache["pres"][i])
        grads[f"dense{i}_w"] = g_a.T @ cache["acts"][i].conj()
        grads[f"dense{i}_b"] = g_a.sum(axis=0)
        g_h = g_a @ p[f"dense{i}_w"].conj()

    Z, Xbar, S = cache["Z"], cache["Xbar"], cache["S"]
    g_Z = _crelu_grad(g_h.reshape(Z.shape), Z)
    grads["graph_b"] = g_Z.sum(axis=(0, 1))
    taps = p["taps"]
    SH = S.conj().T
    g_taps = np.empty_like(taps)
    g_Xbar = np.zeros_like(Xbar)
    Gk = g_Z                                   # (S^H)^k g_Z
    XbarH = np.swapaxes(Xbar.conj(), 1, 2)     # (B, K_t, V)
    for k in range(taps.shape[0]):
        if k:
            Gk = SH @ Gk
        g_taps[k] = np.einsum("bcv,bvg->cg", XbarH, Gk)
        g_Xbar += Gk @ taps[k].conj().T
    grads["taps"] = g_taps
    grads["gamma_b"] = g_Xbar.sum(axis=(0, 1))
    grads["gamma"] = np.einsum("bvt,bvc->tc", cache["Xn"].conj(), g_Xbar)
    return grads


def loss_forecast(y, target, v_meas, i_meas, S, mu2: float, observed, return_grad: bool = False):
    """||y - x||^2 + mu2 * ||v_A * conj(i_A) - [y * conj(S y)]_A||^2, summed over a batch."""
    if mu2 < 0:
        raise ValueError("mu2 must be >= 0")
    y = np.asarray(y, dtype=complex)
    single = y.ndim == 1
    yb = y[None] if single else y
    xb = np.asarray(target, dtype=complex).reshape(yb.shape)
    A = np.asarray(observed, dtype=int)
    err = yb - xb
    value = float(np.sum(err.real ** 2 + err.imag ** 2))
    grad = 2 * err
    if mu2 > 0:
        S = np.asarray(S)
        p_meas = (np.asarray(v_meas) * np.conj(np.asarray(i_meas))).reshape(yb.shape[0], A.size)
        Sy = yb @ S.T
        r = p_meas - (yb * np.conj(Sy))[:, A]
        value += mu2 * float(np.sum(r.real ** 2 + r.imag ** 2))
        r_pad = np.zeros_like(yb)
        r_pad[:, A] = r
        grad = grad - 2 * mu2 * (np.conj((r_pad * np.conj(yb)) @ S) + r_pad * Sy)
    if not return_grad:
        return value
    return value, (grad[0] if single else grad)


def loss_localization(yc, labels, return_grad: bool = False):
    """Squared error sum (yc - labels)^2."""
    yc = np.asarray(yc, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if yc.shape != labels.shape:
        raise ValueError(f"prediction shape {yc.shape} != label shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    d = yc - labels
    value = float(np.sum(d * d))
    return (value, 2 * d) if return_grad else value


# -- optimisation -------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    mu2: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_gso: bool = True


class Adam:
    """Adam with independent first/second moments on each real plane."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, model: StgcnModel, grads: GradientSet) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            if np.iscomplexobj(g):
                sq = g.real ** 2 + 1j * g.imag ** 2
            else:
                sq = g * g
            v = self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * sq
            mh, vh = m / c1, v / c2
            if np.iscomplexobj(g):
                upd = mh.real / (np.sqrt(vh.real) + self.eps) + 1j * mh.imag / (np.sqrt(vh.imag) + self.eps)
            else:
                upd = mh / (np.sqrt(vh) + self.eps)
            model.params[k] = model.params[k] - self.lr * upd
        model.version += 1


@dataclass
class TrainingSet:
    inputs: np.ndarray                   # (N, V, T) complex
    targets: np.ndarray                  # (N, n_out): complex states or binary labels
    v_meas: np.ndarray | None = None     # (N, |A|) measured voltages at t+H
    i_meas: np.ndarray | None = None     # (N, |A|) measured currents at t+H
    observed: np.ndarray | None = None

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx) -> "TrainingSet":
        pick = lambda a: None if a is None else a[idx]
        return TrainingSet(self.inputs[idx], self.targets[idx], pick(self.v_meas),
                           pick(self.i_meas), self.observed)


def batch_loss(model: StgcnModel, S_layer, data: TrainingSet, S_phys=None, mu2: float = 0.0,
               return_grad: bool = False):
    """Mean per-sample loss over ``data`` (and its parameter gradients)."""
    pred, cache = forward(model, S_layer, data.inputs)
    n = len(data)
    if model.config.head == "regression":
        if mu2 > 0:
            out = loss_forecast(pred, data.targets, data.v_meas, data.i_meas, S_phys, mu2,
                                data.observed, return_grad=return_grad)
        else:
            out = loss_forecast(pred, data.targets, None, None, None, 0.0, [], return_grad=return_grad)
    else:
        out = loss_localization(pred, data.targets, return_grad=return_grad)
    if not return_grad:
        return out / n
    value, g = out
    return value / n, backward(model, cache, g / n)


def train(model: StgcnModel, data: TrainingSet, config: TrainConfig, S_layer, S_phys=None,
          val: TrainingSet | None = None, log=None):
    """Minibatch Adam. Returns (best snapshot, per-epoch trace).

    The snapshot is the one with the lowest validation loss (training loss if
    no validation set is given).
    """
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.lr, config.beta1, config.beta2, config.adam_eps)
    mu2 = config.mu2 if model.config.head == "regression" else 0.0
    trace = []
    best, best_score = model.copy(), np.inf
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            value, grads = batch_loss(model, S_layer, data.subset(idx), S_phys, mu2, return_grad=True)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            total += value * len(idx)
            opt.step(model, grads)
        rec = {"epoch": epoch, "train_loss": total / n}
        score = rec["train_loss"]
        if val is not None and len(val):
            rec["val_loss"] = batch_loss(model, S_layer, val, S_phys, mu2)
            score = rec["val_loss"]
        if not np.isfinite(score):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        trace.append(rec)
        if log is not None:
            log(rec)
        if score < best_score:
            best, best_score = model.copy(), score
    return best, trace


def normalized_gso(S, normalize: bool = True):
    S = np.asarray(S)
    return S / np.linalg.norm(S, 2) if normalize else S


# -- checkpoints --------------------------------------------------------------

def _enc(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}
    return {"shape": list(a.shape), "re": np.asarray(a, dtype=float).ravel().tolist()}


def _dec(d):
    re = np.array(d["re"], dtype=float).reshape(d["shape"])
    if "im" in d:
        return re + 1j * np.array(d["im"], dtype=float).reshape(d["shape"])
    return re


def save_checkpoint(model: StgcnModel, path, metadata: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "params": {k: _enc(v) for k, v in model.params.items()},
        "input_offset": _enc(model.input_offset),
        "input_scale": float(model.input_scale),
        "target_offset": _enc(model.target_offset),
        "target_scale": float(model.target_scale),
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> StgcnModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    cfg = StgcnConfig(**doc["config"])
    params = {k: _dec(v) for k, v in doc["params"].items()}
    expected = cfg.param_shapes()
    for k, shape in expected.items():
        if k not in params or params[k].shape != tuple(shape):
            raise ValueError(f"checkpoint parameter {k} missing or misshapen")
    return StgcnModel(cfg, params, _dec(doc["input_offset"]), doc["input_scale"],
                      _dec(doc["target_offset"]), doc["target_scale"])
