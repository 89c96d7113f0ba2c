"""Dense feed-forward networks in plain numpy: forward, backprop, Adam."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("elu", "sigmoid", "relu", "identity")
LOSSES = ("mse", "cross_entropy")
FORMAT_VERSION = 1
_CE_EPS = 1e-12


class TrainingDiverged(RuntimeError):
    pass


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "elu":
        return np.where(z >= 0, 1.0, a + 1.0)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


@dataclass
class Layer:
    W: np.ndarray      # (out, in)
    b: np.ndarray      # (out,)
    activation: str

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size


@dataclass
class DenseNetwork:
    layers: list

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.W.shape[1] != prev.W.shape[0]:
                raise ValueError("layer dimensions do not chain")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.b.shape != (layer.W.shape[0],):
                raise ValueError("bias length must match layer width")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> "DenseNetwork":
        return DenseNetwork([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])


# a relu unit whose pre-activation is negative on every input never recovers
RELU_MARGIN = 0.1


def build_network(sizes, activations, seed=0) -> DenseNetwork:
    """Glorot-uniform weights, zero biases.

    A relu layer fed by a sigmoid layer sees inputs in [0, 1], so its biases
    start at sum_i max(0, -W_ji) + RELU_MARGIN: every unit is active for any
    input at initialization.
    """
    if len(sizes) - 1 != len(activations):
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    prev = None
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, (fan_out, fan_in))
        b = np.zeros(fan_out)
        if act == "relu" and prev == "sigmoid":
            b = np.clip(-W, 0.0, None).sum(axis=1) + RELU_MARGIN
        layers.append(Layer(W, b, act))
        prev = act
    return DenseNetwork(layers)


HIDDEN_ACTIVATIONS = ("elu", "elu", "sigmoid", "sigmoid", "relu")


def build_centralized(K: int, L: int, seed=0) -> DenseNetwork:
    """All K*L fading coefficients in, all K*L power amplitudes out."""
    if K < 1 or L < 1:
        raise ValueError("K and L must be >= 1")
    return build_network([K * L, 128, 512, 256, 128, K * L], HIDDEN_ACTIVATIONS, seed)


def build_decentralized(K: int, seed=0) -> DenseNetwork:
    """One AP's K local coefficients in, its K power amplitudes out."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return build_network([K, 16, 64, 32, 16, K], HIDDEN_ACTIVATIONS, seed)


def forward(net: DenseNetwork, x: np.ndarray, cache: bool = False):
    """Evaluate on a batch ``x`` of shape ``(B, input_dim)`` (or one vector)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.input_dim:
        raise ValueError(f"input has {a.shape[1]} features, network expects {net.input_dim}")
    zs, acts = [], [a]
    for layer in net.layers:
        z = a @ layer.W.T + layer.b
        a = _act(layer.activation, z)
        zs.append(z)
        acts.append(a)
    out = a[0] if single else a
    return (out, zs, acts) if cache else out


def loss_value(y_hat: np.ndarray, y: np.ndarray, loss: str = "mse") -> float:
    if loss == "mse":
        return float(np.mean((y_hat - y) ** 2))
    if loss == "cross_entropy":
        p = y_hat / (y_hat.sum(axis=1, keepdims=True) + _CE_EPS)
        q = y / (y.sum(axis=1, keepdims=True) + _CE_EPS)
        return float(-np.mean(np.sum(q * np.log(p + _CE_EPS), axis=1)))
    raise ValueError(f"unknown loss {loss!r}")


def _loss_grad(y_hat: np.ndarray, y: np.ndarray, loss: str) -> np.ndarray:
    B = y_hat.shape[0]
    if loss == "mse":
        return 2.0 * (y_hat - y) / y_hat.size
    # cross-entropy between sum-normalized target and sum-normalized output
    S = y_hat.sum(axis=1, keepdims=True) + _CE_EPS
    p = y_hat / S
    q = y / (y.sum(axis=1, keepdims=True) + _CE_EPS)
    g = -q / (p + _CE_EPS) / B
    return (g - np.sum(g * p, axis=1, keepdims=True)) / S


def backward(net: DenseNetwork, x: np.ndarray, y: np.ndarray, loss: str = "mse"):
    """Loss and its gradient w.r.t. every parameter, in ``net.params()`` order."""
    y_hat, zs, acts = forward(net, x, cache=True)
    y = np.asarray(y, dtype=float).reshape(y_hat.shape)
    delta = _loss_grad(y_hat, y, loss)
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        delta = delta * _act_grad(layer.activation, zs[i], acts[i + 1])
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = delta @ layer.W
    return loss_value(y_hat, y, loss), grads


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig) -> AdamState:
    """In-place bias-corrected Adam update of ``params``."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)
    return state


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)


def train(net: DenseNetwork, x_train, y_train, x_val=None, y_val=None,
          cfg: TrainConfig | None = None) -> tuple[DenseNetwork, History]:
    """Mini-batch Adam; the shuffle of epoch ``e`` is seeded by ``(cfg.seed, e)``."""
    cfg = cfg or TrainConfig()
    x_train = np.asarray(x_train, float)
    y_train = np.asarray(y_train, float)
    n = x_train.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    params = net.params()
    state = AdamState.zeros_like(params)
    history = History()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = backward(net, x_train[idx], y_train[idx], cfg.loss)
            if not np.isfinite(value):
                raise TrainingDiverged(f"loss became {value} in epoch {epoch}")
            adam_step(params, grads, state, cfg)
            total += value * len(idx)
        history.train_loss.append(total / n)
        if x_val is not None and len(x_val):
            history.val_loss.append(loss_value(forward(net, x_val), np.asarray(y_val, float), cfg.loss))
        log.debug("epoch %d train %.3e", epoch, history.train_loss[-1])
    return net, history


def project_powers(gamma, p_dl_max: float) -> np.ndarray:
    """Scale down every AP column whose power exceeds ``p_dl_max``.

    ``gamma`` has shape ``(..., K, L)`` or ``(K,)`` for a single AP.
    """
    gamma = np.clip(np.asarray(gamma, dtype=float), 0.0, None)
    single_ap = gamma.ndim == 1
    g = gamma[:, None] if single_ap else gamma
    power = (g**2).sum(axis=-2, keepdims=True)
    factor = np.where(power > p_dl_max, np.sqrt(p_dl_max / np.where(power > 0, power, 1.0)), 1.0)
    out = g * factor
    return out[:, 0] if single_ap else out


@dataclass
class Normalizer:
    """Feature standardization of beta in dB and the target amplitude scale."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_scale: float

    @classmethod
    def fit(cls, beta_db: np.ndarray, p_dl_max: float) -> "Normalizer":
        std = beta_db.std(axis=0)
        return cls(beta_db.mean(axis=0), np.where(std > 0, std, 1.0), float(np.sqrt(p_dl_max)))

    def inputs(self, beta_db):
        return (np.asarray(beta_db, float) - self.x_mean) / self.x_std

    def targets(self, gamma):
        return np.asarray(gamma, float) / self.y_scale

    def outputs(self, y):
        return np.asarray(y, float) * self.y_scale


def save_model(path, net: DenseNetwork, normalizer: Normalizer | None = None,
               history: History | None = None, meta: dict | None = None) -> None:
    """Write an ``.npz`` container; arrays round-trip bit-exactly."""
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "activations": np.array([l.activation for l in net.layers]),
        "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for i, layer in enumerate(net.layers):
        arrays[f"W{i}"] = np.ascontiguousarray(layer.W)
        arrays[f"b{i}"] = layer.b
    if normalizer is not None:
        arrays.update(x_mean=normalizer.x_mean, x_std=normalizer.x_std, y_scale=np.array(normalizer.y_scale))
    if history is not None:
        arrays.update(train_loss=np.array(history.train_loss), val_loss=np.array(history.val_loss))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Return ``(net, normalizer or None, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        acts = [str(a) for a in data["activations"]]
        layers = [Layer(data[f"W{i}"].copy(), data[f"b{i}"].copy(), a) for i, a in enumerate(acts)]
        normalizer = None
        if "x_mean" in data:
            normalizer = Normalizer(data["x_mean"].copy(), data["x_std"].copy(), float(data["y_scale"]))
        meta = json.loads(str(data["meta"]))
    return DenseNetwork(layers), normalizer, meta
