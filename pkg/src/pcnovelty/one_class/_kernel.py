from dataclasses import dataclass

import numpy as np

_CHUNK = 1 << 22  # elements per difference block


@dataclass(frozen=True)
class KernelSpec:
    """``rbf``: exp(-gamma d^2); ``gaussian``: exp(-d^2 / (2 sigma^2)); ``linear``: x.y."""

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rbf", "gaussian", "linear"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind != "linear" and not self.param > 0:
            raise ValueError(f"{self.kind} kernel needs a positive parameter, got {self.param}")

    @classmethod
    def rbf(cls, gamma):
        return cls("rbf", float(gamma))

    @classmethod
    def gaussian(cls, sigma):
        return cls("gaussian", float(sigma))

    @classmethod
    def linear(cls):
        return cls("linear", 0.0)

    @property
    def gamma(self):
        if self.kind == "rbf":
            return self.param
        if self.kind == "gaussian":
            return 1.0 / (2.0 * self.param * self.param)
        raise AttributeError("linear kernel has no width")


def sq_distances(X, Y):
    """Squared Euclidean distances by explicit differences (exact zeros on equal rows)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    out = np.empty((len(X), len(Y)))
    step = max(1, _CHUNK // max(1, Y.size))
    for s in range(0, len(X), step):
        diff = X[s:s + step, None, :] - Y[None, :, :]
        out[s:s + step] = (diff * diff).sum(axis=2)
    return out


def kernel_matrix(X, Y, kernel):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if kernel.kind == "linear":
        return X @ Y.T
    return np.exp(-kernel.gamma * sq_distances(X, Y))


def kernel_diag(X, kernel):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if kernel.kind == "linear":
        return (X * X).sum(axis=1)
    return np.ones(len(X))


def median_distance(X):
    """Median pairwise Euclidean distance over distinct pairs."""
    d2 = sq_distances(X, X)
    iu = np.triu_indices(len(X), k=1)
    if len(iu[0]) == 0:
        raise ValueError("need at least two rows")
    return float(np.sqrt(np.median(d2[iu])))
