"""Small dense ReLU networks in numpy.

Forward pass, reverse-mode gradients for mean squared error, plain SGD and
sound interval propagation. Everything runs in float64.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "linear")


@dataclass
class Layer:
    w: np.ndarray  # (n_out, n_in)
    b: np.ndarray  # (n_out,)
    act: str = "relu"

    def __post_init__(self):
        self.w = np.array(self.w, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64, ndmin=1)
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.w.shape[0] != self.b.shape[0]:
            raise ValueError(f"weight rows {self.w.shape[0]} != bias length {self.b.shape[0]}")


@dataclass
class Mlp:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.w.shape[0] != nxt.w.shape[1]:
                raise ValueError("consecutive layer dimensions disagree")
        if self.layers[-1].act != "linear":
            raise ValueError("the final layer must be linear")

    @classmethod
    def random(cls, sizes, rng: np.random.Generator) -> "Mlp":
        """ReLU hidden layers, linear output; weights uniform in +-1/sqrt(fan_in)."""
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            act = "linear" if i == len(sizes) - 2 else "relu"
            layers.append(
                Layer(
                    rng.uniform(-bound, bound, size=(n_out, n_in)),
                    rng.uniform(-bound, bound, size=n_out),
                    act,
                )
            )
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def n_out(self) -> int:
        return self.layers[-1].w.shape[0]

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def load_from(self, other: "Mlp") -> None:
        for mine, theirs in zip(self.layers, other.layers):
            mine.w[...] = theirs.w
            mine.b[...] = theirs.b

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.w, layer.b])
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"w": layer.w.tolist(), "b": layer.b.tolist(), "act": layer.act}
                for layer in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        return cls([Layer(d["w"], d["b"], d["act"]) for d in data["layers"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_input(net: Mlp, x: np.ndarray) -> None:
    if x.shape[-1] != net.n_in:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {net.n_in}")


def forward(net: Mlp, x) -> np.ndarray:
    """Evaluate ``net`` on a vector or on a batch of row vectors."""
    h = np.asarray(x, dtype=np.float64)
    _check_input(net, h)
    for layer in net.layers:
        h = h @ layer.w.T + layer.b
        if layer.act == "relu":
            h = np.maximum(h, 0.0)
    return h


def _forward_cache(net: Mlp, x: np.ndarray):
    acts = [x]
    h = x
    for layer in net.layers:
        h = h @ layer.w.T + layer.b
        if layer.act == "relu":
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _backward(net: Mlp, acts, grad_out: np.ndarray):
    grads = [None] * len(net.layers)
    g = grad_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.act == "relu":
            g = g * (acts[i + 1] > 0)
        grads[i] = (g.T @ acts[i], g.sum(axis=0))
        if i:
            g = g @ layer.w
    return grads


def mse_gradients(net: Mlp, x, y, mask=None):
    """Mean squared error over the batch and its parameter gradients.

    The loss is the mean over samples of the summed squared residual. With
    ``mask`` only the selected output entries contribute (used for the
    taken-action Q-value).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    _check_input(net, x)
    acts = _forward_cache(net, x)
    resid = acts[-1] - y
    if mask is not None:
        resid = resid * mask
    n = x.shape[0]
    loss = float(np.sum(resid**2) / n)
    grads = _backward(net, acts, 2.0 * resid / n)
    return loss, grads


def sgd_step(net: Mlp, grads, lr: float) -> None:
    for layer, (gw, gb) in zip(net.layers, grads):
        layer.w -= lr * gw
        layer.b -= lr * gb


def train_batch(net: Mlp, batch, lr: float) -> float:
    """One SGD step on the batch MSE; returns the loss before the update.

    ``batch`` is either a sequence of ``(input, target)`` pairs or an
    ``(inputs, targets)`` tuple of 2-d arrays.
    """
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        x, y = batch
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        x = np.array([b[0] for b in batch], dtype=np.float64)
        y = np.array([b[1] for b in batch], dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty batch")
    loss, grads = mse_gradients(net, x, y)
    sgd_step(net, grads, lr)
    return loss


@dataclass(frozen=True)
class IntervalVector:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ValueError("lo and hi shapes differ")
        if np.any(lo > hi):
            raise ValueError("interval with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))


def interval_forward(net: Mlp, box: IntervalVector) -> IntervalVector:
    """Interval enclosure of ``net``'s image of ``box``.

    Affine layers split the weights by sign; ReLU clamps both bounds. Bounds
    are widened by a floating-point error bound on the dot products so the
    enclosure also holds for the rounded concrete forward pass.
    """
    lo = np.asarray(box.lo, dtype=np.float64)
    hi = np.asarray(box.hi, dtype=np.float64)
    _check_input(net, lo)
    eps = np.finfo(np.float64).eps
    for layer in net.layers:
        w_pos = np.maximum(layer.w, 0.0)
        w_neg = np.minimum(layer.w, 0.0)
        new_lo = w_pos @ lo + w_neg @ hi + layer.b
        new_hi = w_pos @ hi + w_neg @ lo + layer.b
        mag = np.abs(layer.w) @ np.maximum(np.abs(lo), np.abs(hi)) + np.abs(layer.b)
        slack = (layer.w.shape[1] + 2) * eps * mag
        new_lo = new_lo - slack
        new_hi = new_hi + slack
        if layer.act == "relu":
            new_lo = np.maximum(new_lo, 0.0)
            new_hi = np.maximum(new_hi, 0.0)
        lo, hi = new_lo, np.maximum(new_hi, new_lo)
    return IntervalVector(lo, hi)


class Adam:
    """Adam update rule over an :class:`Mlp`'s parameters."""

    def __init__(self, net: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]

    def step(self, net: Mlp, grads) -> None:
        self.t += 1
        flat = [g for pair in grads for g in pair]
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(net.params(), flat, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
