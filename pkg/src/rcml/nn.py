"""Small ReLU perceptrons with an exposed tap layer, BCE loss and plain SGD.

Everything is float64 numpy. Networks are treated as values: ``sgd_step``
returns a new network rather than mutating its argument.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

BCE_EPS = 1e-7


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    layer_widths: tuple[int, ...]
    tap_layer: Optional[int] = None  # None -> last hidden layer
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if self.tap_layer is None:
            object.__setattr__(self, "tap_layer", len(self.layer_widths) - 2)
        self.validate()

    def validate(self) -> None:
        w = self.layer_widths
        if len(w) < 3:
            raise NetworkError("need at least one hidden layer: widths [d, h, ..., V]")
        if any(x < 1 for x in w):
            raise NetworkError("layer widths must be positive")
        if not 1 <= self.tap_layer < len(w) - 1:
            raise NetworkError(f"tap_layer must be in [1, {len(w) - 2}], got {self.tap_layer}")
        if not self.init_scale >= 0:
            raise NetworkError("init_scale must be >= 0")

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class Network:
    config: MlpConfig
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: Optional[int] = None

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        widths = self.config.layer_widths
        if len(ws) != len(widths) - 1 or len(bs) != len(ws):
            raise NetworkError("parameter count does not match config")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise NetworkError(f"layer {i}: shapes {w.shape}/{b.shape} do not match config")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NetworkError(f"layer {i}: non-finite parameters")
            w.flags.writeable = False
            b.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_flat(self, vec: np.ndarray) -> "Network":
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return Network(self.config, tuple(ws), tuple(bs), self.seed)

    def equals(self, other: "Network") -> bool:
        return self.config == other.config and all(
            np.array_equal(a, b) for a, b in zip(self.flat_parts(), other.flat_parts()))

    def flat_parts(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])


@dataclass(frozen=True)
class NetworkPair:
    f: Network
    g: Network

    def __post_init__(self):
        if self.f.config.layer_widths != self.g.config.layer_widths or \
                self.f.config.tap_layer != self.g.config.tap_layer:
            raise NetworkError("pair members must share an architecture")

    def equals(self, other: "NetworkPair") -> bool:
        return self.f.equals(other.f) and self.g.equals(other.g)


@dataclass(frozen=True)
class SgdConfig:
    initial_lr: float = 1e-3
    decay: float = 0.9
    batch_size: int = 64
    epochs: int = 30

    def validate(self) -> None:
        if not self.initial_lr > 0:
            raise NetworkError("initial_lr must be positive")
        if not 0 < self.decay <= 1:
            raise NetworkError("decay must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise NetworkError("batch_size must be positive and epochs non-negative")

    def lr(self, epoch: int) -> float:
        return self.initial_lr * self.decay ** epoch


def init_network(config: MlpConfig, seed: int) -> Network:
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    widths = config.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = config.init_scale / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Network(config, tuple(ws), tuple(bs), seed)


def init_pair(config: MlpConfig, seed_f: Optional[int] = None, seed_g: Optional[int] = None) -> NetworkPair:
    """Two independently initialised networks of the same shape.

    Seeds default to ``config.seed`` and ``config.seed + 1``.
    """
    seed_f = config.seed if seed_f is None else seed_f
    seed_g = seed_f + 1 if seed_g is None else seed_g
    if seed_f == seed_g:
        raise NetworkError("f and g must be initialised with different seeds")
    return NetworkPair(init_network(config, seed_f), init_network(config, seed_g))


# ------------------------------------------------------------------ forward/back


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each linear layer
    pre: list[np.ndarray] = field(default_factory=list)     # pre-activations per layer


def _check_input(net: Network, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.config.n_inputs:
        raise NetworkError(f"expected input with {net.config.n_inputs} columns, got shape {X.shape}")
    return X


def forward_cached(net: Network, X: np.ndarray):
    X = _check_input(net, X)
    cache = ForwardCache()
    h = X
    tap = None
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(h)
        z = h @ w + b
        cache.pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        if i + 1 == net.config.tap_layer:
            tap = h
    return tap, h, cache


def forward(net: Network, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (tap-layer activations, output logits) for a batch."""
    tap, logits, _ = forward_cached(net, X)
    return tap, logits


def backward(net: Network, cache: ForwardCache, grad_logits: np.ndarray,
             grad_tap: Optional[np.ndarray] = None) -> Gradients:
    """Backpropagate loss gradients given w.r.t. the logits and optionally the tap activations."""
    n_layers = len(net.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = np.asarray(grad_logits, dtype=np.float64)  # d loss / d pre-activation of current layer
    for i in range(n_layers - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        grad_h = delta @ net.weights[i].T
        if grad_tap is not None and i == net.config.tap_layer:
            grad_h = grad_h + grad_tap
        delta = grad_h * (cache.pre[i - 1] > 0)
    return Gradients(gw, gb)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(logits: np.ndarray, targets: np.ndarray, selected: Optional[Sequence[int]] = None,
             eps: float = BCE_EPS) -> tuple[float, np.ndarray]:
    """Mean clamped binary cross-entropy over the selected rows and all classes.

    Returns the loss and its gradient w.r.t. the logits; rows outside the
    selection get exactly zero gradient, as do entries where the clamp is
    active.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise NetworkError("logits and targets differ in shape")
    B, V = logits.shape
    rows = np.arange(B) if selected is None else np.unique(np.asarray(list(selected), dtype=np.int64))
    if rows.size == 0:
        raise NetworkError("empty selection")
    if rows.min() < 0 or rows.max() >= B:
        raise NetworkError("selection index out of range")
    z, y = logits[rows], targets[rows]
    p = sigmoid(z)
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p > eps) & (p < 1.0 - eps)
    grad = np.zeros_like(logits)
    grad[rows] = np.where(inside, p - y, 0.0) / (rows.size * V)
    return float(loss), grad


def sgd_step(net: Network, grads: Gradients, epoch: int, cfg: SgdConfig) -> Network:
    if len(grads.weights) != len(net.weights) or len(grads.biases) != len(net.biases):
        raise NetworkError("gradient layer count mismatch")
    lr = cfg.lr(epoch)
    ws, bs = [], []
    for w, b, gw, gb in zip(net.weights, net.biases, grads.weights, grads.biases):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise NetworkError("gradient shape mismatch")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NetworkError("non-finite gradient")
        ws.append(w - lr * gw)
        bs.append(b - lr * gb)
    return Network(net.config, tuple(ws), tuple(bs), net.seed)


# ------------------------------------------------------------------- checkpoint


def network_to_dict(net: Network) -> dict:
    cfg = net.config
    return {
        "config": {"layer_widths": list(cfg.layer_widths), "tap_layer": cfg.tap_layer,
                   "init_scale": cfg.init_scale, "seed": cfg.seed},
        "seed": net.seed,
        "layers": [{"weights": w.tolist(), "biases": b.tolist()} for w, b in zip(net.weights, net.biases)],
    }


def network_from_dict(doc: dict) -> Network:
    cfg = MlpConfig(**doc["config"])
    ws = tuple(np.array(layer["weights"], dtype=np.float64).reshape(a, b)
               for layer, a, b in zip(doc["layers"], cfg.layer_widths[:-1], cfg.layer_widths[1:]))
    bs = tuple(np.array(layer["biases"], dtype=np.float64) for layer in doc["layers"])
    return Network(cfg, ws, bs, doc.get("seed"))


def save_checkpoint(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh)


def load_checkpoint(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))
