"""Per-channel recurrent encoders fused by concatenation, in plain numpy.

Gate blocks are ordered forget, input, output, candidate. Each block of U is
H x input_size, of W is H x H, of b is H; they are stored stacked as
(4, H, input_size), (4, H, H) and (4, H).
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .genome import ModelConfig

GATES = ("forget", "input", "output", "candidate")
SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
CHECKPOINT_MAGIC = b"FSNN"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """Raised when activations or the loss stop being finite."""


def sigmoid(a):
    # split by sign so large |a| never overflows exp
    a = np.asarray(a)
    out = np.empty_like(a, dtype=np.result_type(a, np.float32))
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _fast_sigmoid(a):
    return 0.5 * (np.tanh(0.5 * a) + 1.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _fast_sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0)
    if name == "selu":
        return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0)))
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1 - y * y
    if name == "sigmoid":
        return y * (1 - y)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "selu":
        return np.where(z > 0, SELU_LAMBDA, y + SELU_LAMBDA * SELU_ALPHA).astype(z.dtype)
    raise ValueError(f"unknown activation {name!r}")


# --- single cell -------------------------------------------------------------

@dataclass
class LstmCellParams:
    U: np.ndarray  # (4, H, input_size)
    W: np.ndarray  # (4, H, H)
    b: np.ndarray  # (4, H)

    def __post_init__(self):
        H = self.W.shape[1]
        if self.U.shape[:2] != (4, H) or self.W.shape != (4, H, H) or self.b.shape != (4, H):
            raise ValueError(f"inconsistent cell shapes U{self.U.shape} W{self.W.shape} b{self.b.shape}")

    @property
    def hidden_size(self) -> int:
        return self.W.shape[1]

    @property
    def input_size(self) -> int:
        return self.U.shape[2]


def lstm_cell_step(p: LstmCellParams, x, h_prev, s_prev):
    """One time step; returns (h, s)."""
    x = np.asarray(x)
    if x.shape[-1] != p.input_size or np.shape(h_prev)[-1] != p.hidden_size \
            or np.shape(s_prev)[-1] != p.hidden_size:
        raise ValueError("shape mismatch between cell parameters and inputs")
    z = np.einsum("ghi,...i->...gh", p.U, x) + np.einsum("ghk,...k->...gh", p.W, h_prev) + p.b
    f = sigmoid(z[..., 0, :])
    i = sigmoid(z[..., 1, :])
    o = sigmoid(z[..., 2, :])
    g = np.tanh(z[..., 3, :])
    s = f * s_prev + i * g
    h = np.tanh(s) * o
    return h, s


# --- sequence-level recurrent pass ------------------------------------------

def _lstm_seq_forward(X, U, W, b):
    B, T, _ = X.shape
    H = W.shape[1]
    Uf = U.reshape(4 * H, -1)
    Wf = W.reshape(4 * H, H)
    Z = (np.ascontiguousarray(X).reshape(B * T, -1) @ Uf.T).reshape(B, T, 4 * H) + b.reshape(4 * H)
    gates = np.empty((T, B, 4 * H), dtype=X.dtype)
    S = np.empty((T, B, H), dtype=X.dtype)
    tS = np.empty((T, B, H), dtype=X.dtype)
    Hs = np.empty((B, T, H), dtype=X.dtype)
    h = np.zeros((B, H), dtype=X.dtype)
    s = np.zeros((B, H), dtype=X.dtype)
    for t in range(T):
        z = Z[:, t] + h @ Wf.T
        a = gates[t]
        a[:, :3 * H] = _fast_sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        s = a[:, :H] * s + a[:, H:2 * H] * a[:, 3 * H:]
        S[t] = s
        tS[t] = np.tanh(s)
        h = tS[t] * a[:, 2 * H:3 * H]
        Hs[:, t] = h
    return Hs, (X, gates, S, tS, Hs)


def _lstm_seq_backward(dHs, cache, U, W, need_dx: bool):
    X, gates, S, tS, Hs = cache
    B, T, _ = X.shape
    H = W.shape[1]
    Wf = W.reshape(4 * H, H)
    dZ = np.empty((B, T, 4 * H), dtype=X.dtype)
    dh_next = np.zeros((B, H), dtype=X.dtype)
    ds_next = np.zeros((B, H), dtype=X.dtype)
    zero = np.zeros((B, H), dtype=X.dtype)
    for t in range(T - 1, -1, -1):
        a = gates[t]
        f, i, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        dh = dHs[:, t] + dh_next
        ds = ds_next + dh * o * (1 - tS[t] * tS[t])
        s_prev = S[t - 1] if t > 0 else zero
        dz = dZ[:, t]
        dz[:, :H] = ds * s_prev * f * (1 - f)
        dz[:, H:2 * H] = ds * g * i * (1 - i)
        dz[:, 2 * H:3 * H] = dh * tS[t] * o * (1 - o)
        dz[:, 3 * H:] = ds * i * (1 - g * g)
        ds_next = ds * f
        dh_next = dz @ Wf
    Hprev = np.concatenate([np.zeros((B, 1, H), dtype=X.dtype), Hs[:, :-1]], axis=1)
    dZ2 = dZ.reshape(B * T, 4 * H)
    dU = (dZ2.T @ np.ascontiguousarray(X).reshape(B * T, -1)).reshape(U.shape)
    dW = (dZ2.T @ Hprev.reshape(B * T, H)).reshape(W.shape)
    db = dZ2.sum(axis=0).reshape(4, H)
    dX = (dZ2 @ U.reshape(4 * H, -1)).reshape(B, T, -1) if need_dx else None
    return dX, dU, dW, db


# --- network -----------------------------------------------------------------

@dataclass
class FusionNetwork:
    config: ModelConfig
    input_dim: int
    hidden: int
    dense: int
    params: dict[str, np.ndarray] = field(default_factory=dict)
    dtype: type = np.float32

    @property
    def n_channels(self) -> int:
        return self.config.n_channels

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fw", "bw") if self.config.bidirectional else ("fw",)

    @property
    def encoder_width(self) -> int:
        return len(self.directions) * self.hidden

    @property
    def fusion_width(self) -> int:
        return self.n_channels * (self.dense if self.dense else self.encoder_width)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        H = self.hidden
        for c in range(self.n_channels):
            for layer in range(self.config.lstm_layers):
                inp = self.input_dim if layer == 0 else self.encoder_width
                for d in self.directions:
                    pre = f"ch{c}.l{layer}.{d}"
                    shapes[f"{pre}.U"] = (4, H, inp)
                    shapes[f"{pre}.W"] = (4, H, H)
                    shapes[f"{pre}.b"] = (4, H)
            if self.dense:
                shapes[f"ch{c}.dense.W"] = (self.encoder_width, self.dense)
                shapes[f"ch{c}.dense.b"] = (self.dense,)
        if self.dense:
            shapes["fusion.W"] = (self.fusion_width, self.dense)
            shapes["fusion.b"] = (self.dense,)
        head = self.dense if self.dense else self.fusion_width
        shapes["out.W"] = (head, 2)
        shapes["out.b"] = (2,)
        return shapes

    def init_params(self, seed) -> None:
        """Glorot-uniform weights, zero biases, forget-gate bias 1."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in self.param_shapes().items():
            kind = name.rsplit(".", 1)[1]
            if kind == "b":
                p = np.zeros(shape)
                if len(shape) == 2:
                    p[0] = 1.0
            elif kind in ("U", "W") and len(shape) == 3:
                fan_out, fan_in = shape[1], shape[2]
                lim = math.sqrt(6.0 / (fan_in + fan_out))
                p = rng.uniform(-lim, lim, size=shape)
            else:
                lim = math.sqrt(6.0 / (shape[0] + shape[1]))
                p = rng.uniform(-lim, lim, size=shape)
            params[name] = p.astype(self.dtype)
        self.params = params

    def astype(self, dtype) -> "FusionNetwork":
        return FusionNetwork(self.config, self.input_dim, self.hidden, self.dense,
                             {k: v.astype(dtype) for k, v in self.params.items()}, dtype)


def build_network(config: ModelConfig, input_dim: int = 100, *, seed=0,
                  lstm_shape: int | None = None, dense_size: int | None = None,
                  dtype=np.float32) -> FusionNetwork:
    """Build and initialize a network; ``lstm_shape``/``dense_size`` override the config sizes."""
    hidden = config.lstm_shape if lstm_shape is None else int(lstm_shape)
    dense = config.dense_size if dense_size is None or config.dense_size == 0 else int(dense_size)
    if hidden < 1 or input_dim < 1 or dense < 0:
        raise ValueError("sizes must be positive")
    net = FusionNetwork(config, int(input_dim), hidden, dense, dtype=dtype)
    net.init_params(seed)
    return net


def count_parameters(net: FusionNetwork) -> int:
    return int(sum(p.size for p in net.params.values()))


def closed_form_parameter_count(config: ModelConfig, input_dim: int = 100,
                                lstm_shape: int | None = None,
                                dense_size: int | None = None) -> int:
    n = config.n_channels
    H = config.lstm_shape if lstm_shape is None else lstm_shape
    d = config.dense_size if dense_size is None or config.dense_size == 0 else dense_size
    D = 2 if config.bidirectional else 1
    total = n * D * 4 * (H * (input_dim + H) + H)
    if config.lstm_layers == 2:
        total += n * D * 4 * (H * (D * H + H) + H)
    if d:
        total += n * (D * H * d + d)
        total += n * d * d + d
        total += d * 2 + 2
    else:
        total += n * D * H * 2 + 2
    return total


# --- forward / backward ------------------------------------------------------

def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite activations in {where}")


def _dropout_mask(shape, rate: float, rng, dtype):
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(dtype) / dtype(keep)


def _forward(net: FusionNetwork, channels, training: bool, rng):
    if len(channels) != net.n_channels:
        raise ValueError(f"network expects {net.n_channels} channel slots, got {len(channels)}")
    P = net.params
    cfg = net.config
    rate = cfg.dropout if training else 0.0
    dt = net.dtype
    cache = {"enc": [], "dense": [], "masks": {}}
    feats = []
    for c, X in enumerate(channels):
        X = np.asarray(X, dtype=dt)
        if X.ndim != 3 or X.shape[2] != net.input_dim:
            raise ValueError(f"slot {c}: expected [n, T, {net.input_dim}] input, got {X.shape}")
        seq = X
        layer_caches = []
        for layer in range(cfg.lstm_layers):
            pre = f"ch{c}.l{layer}"
            outs, dir_caches = [], []
            for d in net.directions:
                inp = seq if d == "fw" else seq[:, ::-1]
                Hs, cch = _lstm_seq_forward(inp, P[f"{pre}.{d}.U"], P[f"{pre}.{d}.W"], P[f"{pre}.{d}.b"])
                dir_caches.append(cch)
                outs.append(Hs if d == "fw" else Hs[:, ::-1])
            layer_caches.append(dir_caches)
            seq = np.concatenate(outs, axis=2) if len(outs) > 1 else outs[0]
            _check_finite(seq, f"channel {c} recurrent layer {layer}")
        H = net.hidden
        if cfg.bidirectional:
            feat = np.concatenate([seq[:, -1, :H], seq[:, 0, H:]], axis=1)
        else:
            feat = seq[:, -1]
        if rate > 0:
            m = _dropout_mask(feat.shape, rate, rng, dt)
            cache["masks"][f"enc{c}"] = m
            feat = feat * m
        cache["enc"].append(layer_caches)
        if net.dense:
            z = feat @ P[f"ch{c}.dense.W"] + P[f"ch{c}.dense.b"]
            y = _activate(cfg.dense_activation, z)
            _check_finite(y, f"channel {c} dense layer")
            cache["dense"].append((feat, z, y))
            if rate > 0:
                m = _dropout_mask(y.shape, rate, rng, dt)
                cache["masks"][f"dense{c}"] = m
                y = y * m
            feat = y
        else:
            cache["dense"].append((feat, None, None))
        feats.append(feat)
    fused = np.concatenate(feats, axis=1)
    cache["fused"] = fused
    head = fused
    if net.dense:
        z = fused @ P["fusion.W"] + P["fusion.b"]
        y = _activate(cfg.dense_activation, z)
        _check_finite(y, "fusion dense layer")
        cache["fusion"] = (z, y)
        if rate > 0:
            m = _dropout_mask(y.shape, rate, rng, dt)
            cache["masks"]["fusion"] = m
            y = y * m
        head = y
    cache["head"] = head
    logits = head @ P["out.W"] + P["out.b"]
    _check_finite(logits, "softmax layer")
    return logits, cache


def _backward(net: FusionNetwork, cache, dlogits):
    P = net.params
    cfg = net.config
    masks = cache["masks"]
    grads: dict[str, np.ndarray] = {}
    grads["out.W"] = cache["head"].T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    dhead = dlogits @ P["out.W"].T
    if net.dense:
        z, y = cache["fusion"]
        if "fusion" in masks:
            dhead = dhead * masks["fusion"]
        dz = dhead * _activation_grad(cfg.dense_activation, z, y)
        grads["fusion.W"] = cache["fused"].T @ dz
        grads["fusion.b"] = dz.sum(axis=0)
        dfused = dz @ P["fusion.W"].T
    else:
        dfused = dhead
    width = dfused.shape[1] // net.n_channels
    H = net.hidden
    for c in range(net.n_channels):
        dfeat = dfused[:, c * width:(c + 1) * width]
        if net.dense:
            x_in, z, y = cache["dense"][c]
            if f"dense{c}" in masks:
                dfeat = dfeat * masks[f"dense{c}"]
            dz = dfeat * _activation_grad(cfg.dense_activation, z, y)
            grads[f"ch{c}.dense.W"] = x_in.T @ dz
            grads[f"ch{c}.dense.b"] = dz.sum(axis=0)
            dfeat = dz @ P[f"ch{c}.dense.W"].T
        if f"enc{c}" in masks:
            dfeat = dfeat * masks[f"enc{c}"]
        layer_caches = cache["enc"][c]
        B, T = layer_caches[0][0][0].shape[:2]
        dseq = np.zeros((B, T, net.encoder_width), dtype=dfeat.dtype)
        if cfg.bidirectional:
            dseq[:, -1, :H] = dfeat[:, :H]
            dseq[:, 0, H:] = dfeat[:, H:]
        else:
            dseq[:, -1] = dfeat
        for layer in reversed(range(cfg.lstm_layers)):
            pre = f"ch{c}.l{layer}"
            need_dx = layer > 0
            dinput = None
            for k, d in enumerate(net.directions):
                dH = dseq[:, :, k * H:(k + 1) * H]
                if d == "bw":
                    dH = dH[:, ::-1]
                dX, dU, dW, db = _lstm_seq_backward(dH, layer_caches[layer][k],
                                                    P[f"{pre}.{d}.U"], P[f"{pre}.{d}.W"], need_dx)
                grads[f"{pre}.{d}.U"] = dU
                grads[f"{pre}.{d}.W"] = dW
                grads[f"{pre}.{d}.b"] = db
                if need_dx:
                    if d == "bw":
                        dX = dX[:, ::-1]
                    dinput = dX if dinput is None else dinput + dX
            dseq = dinput
    return {k: grads[k] for k in P}


def forward(net: FusionNetwork, channels, training: bool = False, dropout_rng=None) -> np.ndarray:
    """Class probabilities [n, 2]; column 1 is the positive ("A") class."""
    if training and net.config.dropout > 0 and dropout_rng is None:
        raise ValueError("training with dropout needs a dropout_rng")
    logits, _ = _forward(net, _slots(channels), training, dropout_rng)
    return softmax(logits)


def _slots(batch):
    return batch.channels if hasattr(batch, "channels") else list(batch)


def predict_proba(net: FusionNetwork, data, chunk: int = 2048) -> np.ndarray:
    """Positive-class probability for every window of ``data`` (inference mode)."""
    n = len(data.labels)
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        b = data.take(idx)
        out[idx] = forward(net, b.channels)[:, 1]
    return out


def loss_and_gradients(net: FusionNetwork, batch, class_weights=(1.0, 1.0), labels=None,
                       training: bool = False, dropout_rng=None):
    """Class-weighted cross-entropy (mean over the batch) and its gradients."""
    y = np.asarray(batch.labels if labels is None else labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=net.dtype)
    if np.any(w <= 0):
        raise ValueError("class weights must be positive")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    logits, cache = _forward(net, _slots(batch), training, dropout_rng)
    logp = _log_softmax(logits)
    n = len(y)
    wy = w[y]
    loss = float(-(wy * logp[np.arange(n), y]).sum() / n)
    if not math.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1
    dlogits *= (wy / n)[:, None]
    return loss, _backward(net, cache, dlogits.astype(net.dtype))


def gradient_check(net: FusionNetwork, batch, epsilon: float = 1e-5,
                   class_weights=(1.0, 1.0), fd_dtype=np.longdouble) -> float:
    """Max relative error between backprop and central differences over every parameter.

    Backprop runs in float64; the differences run in ``fd_dtype`` (extended
    precision by default) so cancellation does not swamp tiny gradients.
    Dropout is always off.
    """
    _, grads = loss_and_gradients(net.astype(np.float64), batch, class_weights)
    fd = net.astype(fd_dtype)
    chans = [np.asarray(c, dtype=fd_dtype) for c in _slots(batch)]
    y = np.asarray(batch.labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=fd_dtype)[y]
    eps = fd_dtype(epsilon)

    def loss():
        logits, _ = _forward(fd, chans, False, None)
        return -(w * _log_softmax(logits)[np.arange(len(y)), y]).sum() / len(y)

    worst = 0.0
    for name, p in fd.params.items():
        flat = p.reshape(-1)
        ga = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp = loss()
            flat[k] = orig - eps
            lm = loss()
            flat[k] = orig
            gn = float((lp - lm) / (2 * eps))
            err = abs(ga[k] - gn) / max(abs(ga[k]), abs(gn), 1e-8)
            worst = max(worst, err)
    return worst


# --- optimisation ------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float):
    """In-place bias-corrected Adam update; returns (params, state)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.001
    batch_size: int = 1024
    max_epochs: int = 10
    class_weights: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ValueError("class weights must be positive")


def balanced_class_weights(labels) -> tuple[float, float]:
    """w_c = N / (2 N_c)."""
    y = np.asarray(labels)
    n = len(y)
    counts = np.bincount(y, minlength=2)
    if np.any(counts == 0):
        raise ValueError("both classes are needed to weight the loss")
    return float(n / (2 * counts[0])), float(n / (2 * counts[1]))


class WindowSource(Protocol):
    labels: np.ndarray

    def take(self, idx): ...


def train(net: FusionNetwork, data: WindowSource, spec: TrainSpec,
          on_epoch: Callable[[int, float], None] | None = None):
    """Mini-batch Adam for ``spec.max_epochs`` epochs; returns (net, per-epoch mean loss)."""
    n = len(data.labels)
    if n == 0:
        raise ValueError("empty training set")
    history: list[float] = []
    if spec.max_epochs == 0:
        return net, history
    weights = spec.class_weights or balanced_class_weights(data.labels)
    shuffle_ss, dropout_ss = np.random.SeedSequence(spec.seed).spawn(2)
    order_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(dropout_ss)
    state = AdamState.zeros_like(net.params)
    for epoch in range(spec.max_epochs):
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = np.sort(order[start:start + spec.batch_size])
            batch = data.take(idx)
            try:
                loss, grads = loss_and_gradients(net, batch, weights, training=True,
                                                 dropout_rng=drop_rng)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}: {exc}") from exc
            adam_step(net.params, grads, state, spec.learning_rate)
            total += loss * len(idx)
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return net, history


# --- checkpoint --------------------------------------------------------------

def save_checkpoint(net: FusionNetwork, path: str | Path) -> None:
    """magic, version, header JSON (config + build sizes), then tensors as <f4 with dims."""
    header = net.config.to_dict()
    header.update({"input_dim": net.input_dim, "hidden": net.hidden, "dense": net.dense})
    hb = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
    buf.write(hb)
    buf.write(struct.pack("<I", len(net.params)))
    for p in net.params.values():
        buf.write(struct.pack("<I", p.ndim))
        buf.write(struct.pack(f"<{p.ndim}I", *p.shape))
        buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> FusionNetwork:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a fusion-network checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    header = json.loads(raw[off:off + hlen])
    off += hlen
    cfg = ModelConfig.from_dict(header)
    net = FusionNetwork(cfg, header["input_dim"], header["hidden"], header["dense"],
                        dtype=np.float32)
    shapes = net.param_shapes()
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    if count != len(shapes):
        raise ValueError(f"{path}: expected {len(shapes)} tensors, found {count}")
    params = {}
    for name, shape in shapes.items():
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        if tuple(dims) != shape:
            raise ValueError(f"{path}: tensor {name} has shape {dims}, expected {shape}")
        size = int(np.prod(dims))
        params[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(dims).copy()
        off += 4 * size
    net.params = params
    return net
