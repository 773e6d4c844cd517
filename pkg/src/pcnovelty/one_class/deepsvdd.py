"""Soft-boundary Deep SVDD on a small bias-free fully connected network.

Objective: r^2 + 1/(nu n) sum_i max(0, |phi(x_i) - c|^2 - r^2) + wd/2 |W|^2.
Weights take Adam steps on the full batch; after every epoch r^2 is reset to
the (1 - nu)-quantile of the squared center distances.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..optim import AdamConfig, AdamState, adam_step

LEAK = 0.01
CENTER_EPS = 0.1


@dataclass(frozen=True)
class DeepSvddConfig:
    nu: float = 0.1
    epochs: int = 50
    lr: float = 1e-3
    widths: tuple = (256, 128, 64)
    weight_decay: float = 1e-6
    seed: int = 0


def layer_shapes(d_in, widths):
    shapes, d = [], d_in
    for w in widths:
        shapes.append((d, int(w)))
        d = int(w)
    return shapes


def unflatten(flat, shapes):
    out, off = [], 0
    for fi, fo in shapes:
        out.append(flat[off:off + fi * fo].reshape(fi, fo))
        off += fi * fo
    return out


def net_forward(Ws, X, cache=None):
    h = X
    for i, W in enumerate(Ws):
        a = h @ W
        if cache is not None:
            cache.append((h, a))
        h = a if i == len(Ws) - 1 else np.where(a > 0, a, LEAK * a)
    return h


def net_backward(Ws, cache, dout):
    """Gradients of the weights given d(loss)/d(output)."""
    grads = [None] * len(Ws)
    d = dout
    for i in range(len(Ws) - 1, -1, -1):
        h, a = cache[i]
        if i != len(Ws) - 1:
            d = np.where(a > 0, d, LEAK * d)
        grads[i] = h.T @ d
        d = d @ Ws[i].T
    return grads


def soft_boundary_loss(out, c, r2, nu, n):
    d2 = ((out - c) ** 2).sum(axis=1)
    slack = np.maximum(0.0, d2 - r2)
    loss = r2 + slack.sum() / (nu * n)
    dout = np.where((d2 > r2)[:, None], 2.0 * (out - c), 0.0) / (nu * n)
    return loss, dout, d2


def make_center(out):
    c = out.mean(axis=0)
    small = np.abs(c) < CENTER_EPS
    return np.where(small, np.where(c < 0, -CENTER_EPS, CENTER_EPS), c)


def radius_update(d2, nu):
    return float(np.quantile(d2, 1.0 - nu))


@dataclass
class DeepSvddModel:
    weights: list  # bias-free layer matrices
    center: np.ndarray
    r2: float
    nu: float
    kind = "deepsvdd"

    @property
    def radius(self):
        return math.sqrt(self.r2)

    def embed(self, Z):
        return net_forward(self.weights, np.atleast_2d(np.asarray(Z, dtype=np.float64)))

    def score(self, Z):
        return ((self.embed(Z) - self.center) ** 2).sum(axis=1) - self.r2

    def to_arrays(self):
        out = {f"W{i}": W for i, W in enumerate(self.weights)}
        out.update(center=self.center, r2=np.float64(self.r2), nu=np.float64(self.nu))
        return out

    @classmethod
    def from_arrays(cls, arrays, kernel=None):
        n = sum(1 for k in arrays if k.startswith("W"))
        return cls([arrays[f"W{i}"] for i in range(n)], arrays["center"],
                   float(arrays["r2"]), float(arrays["nu"]))


def fit_deepsvdd(X, config=None):
    cfg = config or DeepSvddConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if n < 2:
        raise ValueError("DeepSVDD needs at least 2 training points")
    if not 0.0 < cfg.nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {cfg.nu}")
    shapes = layer_shapes(d, cfg.widths)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0xD5]))
    flat = np.concatenate([
        rng.uniform(-math.sqrt(6.0 / (fi + fo)), math.sqrt(6.0 / (fi + fo)), size=fi * fo)
        for fi, fo in shapes
    ])
    c = make_center(net_forward(unflatten(flat, shapes), X))
    r2 = 0.0
    state = AdamState.zeros(flat.size)
    adam = AdamConfig(learning_rate=cfg.lr)
    for epoch in range(cfg.epochs):
        Ws = unflatten(flat, shapes)
        cache = []
        out = net_forward(Ws, X, cache)
        loss, dout, _ = soft_boundary_loss(out, c, r2, cfg.nu, n)
        loss += 0.5 * cfg.weight_decay * float(flat @ flat)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite DeepSVDD loss at epoch {epoch}")
        grad = np.concatenate([g.ravel() for g in net_backward(Ws, cache, dout)])
        grad += cfg.weight_decay * flat
        flat, state = adam_step(flat, grad, state, adam)
        d2 = ((net_forward(unflatten(flat, shapes), X) - c) ** 2).sum(axis=1)
        r2 = radius_update(d2, cfg.nu)
    return DeepSvddModel([W.copy() for W in unflatten(flat, shapes)], c, r2, float(cfg.nu))
