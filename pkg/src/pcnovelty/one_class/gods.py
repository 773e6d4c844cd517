"""Generalized one-class discriminative subspaces.

Two orthonormal frames ``W1, W2`` (d x m) with offsets bound the normal data
in a slab: ``W1^T z + b1 >= 1`` and ``W2^T z + b2 <= -1`` on every axis.
Minimized objective::

    |W1 - W2|_F^2 + eta/n sum_i [ max(0, 1 - min_j(W1^T z_i + b1)_j)^2
                                 + max(0, 1 + max_j(W2^T z_i + b2)_j)^2 ]

Frames take gradient steps followed by a QR retraction; offsets take plain
gradient steps. Offsets start at the data mean so the slab grows outward.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GodsConfig:
    m: int = 2
    eta: float = 1.0
    lam: float = 1e-2
    iters: int = 500
    seed: int = 0


def qr_retract(W):
    """Orthonormal factor of ``W`` with a positive-diagonal sign convention."""
    Q, R = np.linalg.qr(W)
    s = np.sign(np.diag(R))
    return Q * np.where(s == 0, 1.0, s)[None, :]


def violations(W1, b1, W2, b2, Z):
    s1 = Z @ W1 + b1
    s2 = Z @ W2 + b2
    j1 = s1.argmin(axis=1)
    j2 = s2.argmax(axis=1)
    rows = np.arange(len(Z))
    v1 = np.maximum(0.0, 1.0 - s1[rows, j1])
    v2 = np.maximum(0.0, 1.0 + s2[rows, j2])
    return v1, v2, j1, j2


def objective(W1, b1, W2, b2, Z, eta):
    v1, v2, _, _ = violations(W1, b1, W2, b2, Z)
    return float(((W1 - W2) ** 2).sum() + eta / len(Z) * ((v1 ** 2).sum() + (v2 ** 2).sum()))


def gradients(W1, b1, W2, b2, Z, eta):
    n, _ = Z.shape
    m = W1.shape[1]
    v1, v2, j1, j2 = violations(W1, b1, W2, b2, Z)
    k = eta / n
    # one-hot selection of the active hyperplane per point
    S1 = np.zeros((n, m))
    S1[np.arange(n), j1] = -2.0 * k * v1
    S2 = np.zeros((n, m))
    S2[np.arange(n), j2] = 2.0 * k * v2
    gW1 = 2.0 * (W1 - W2) + Z.T @ S1
    gW2 = -2.0 * (W1 - W2) + Z.T @ S2
    return gW1, S1.sum(axis=0), gW2, S2.sum(axis=0)


@dataclass
class GodsModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    eta: float
    lam: float
    kind = "gods"

    def score(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        v1, v2, _, _ = violations(self.W1, self.b1, self.W2, self.b2, Z)
        return v1 + v2

    def to_arrays(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2,
                "eta": np.float64(self.eta), "lam": np.float64(self.lam)}

    @classmethod
    def from_arrays(cls, arrays, kernel=None):
        return cls(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"],
                   float(arrays["eta"]), float(arrays["lam"]))


def fit_gods(X, config=None, callback=None):
    """Fit both frames. ``callback(iteration, model)`` runs after every step."""
    cfg = config or GodsConfig()
    Z = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = Z.shape
    if not 1 <= cfg.m <= d:
        raise ValueError(f"number of subspaces must lie in [1, {d}], got {cfg.m}")
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x60D5]))
    W1 = qr_retract(rng.standard_normal((d, cfg.m)))
    W2 = W1.copy()
    mean = Z.mean(axis=0)
    b1 = 1.0 - mean @ W1
    b2 = -1.0 - mean @ W2
    for it in range(cfg.iters):
        gW1, gb1, gW2, gb2 = gradients(W1, b1, W2, b2, Z, cfg.eta)
        W1 = qr_retract(W1 - cfg.lam * gW1)
        W2 = qr_retract(W2 - cfg.lam * gW2)
        b1 = b1 - cfg.lam * gb1
        b2 = b2 - cfg.lam * gb2
        if callback is not None:
            callback(it, GodsModel(W1, b1, W2, b2, cfg.eta, cfg.lam))
    return GodsModel(W1, b1, W2, b2, float(cfg.eta), float(cfg.lam))
