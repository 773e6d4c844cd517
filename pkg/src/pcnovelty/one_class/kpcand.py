"""Kernel PCA novelty detection.

A test point is scored by how much of its centered feature-space image lies
outside the span of the leading ``q`` kernel principal components:
``1 - sum_k cos^2(phi(z), v_k)``.
"""

from dataclasses import dataclass

import numpy as np

from ._kernel import KernelSpec, kernel_diag, kernel_matrix

EIG_FLOOR = 1e-10


@dataclass
class KpcaNdModel:
    X: np.ndarray  # (n, d) training latents
    kernel: KernelSpec
    eigvals: np.ndarray  # (q,) descending, eigenvalues of the centered Gram matrix
    coefs: np.ndarray  # (n, q), eigvals[k] * coefs[:, k] @ coefs[:, k] == 1
    col_means: np.ndarray  # (n,) mean_j K(x_j, x_i)
    total_mean: float
    kind = "kpcand"

    @property
    def q(self):
        return len(self.eigvals)

    def projections(self, Z):
        """Coordinates of the centered images of ``Z`` on the principal axes, and their squared norms."""
        Kz = kernel_matrix(Z, self.X, self.kernel)
        row_means = Kz.mean(axis=1)
        Kc = Kz - row_means[:, None] - self.col_means[None, :] + self.total_mean
        proj = Kc @ self.coefs
        norm2 = kernel_diag(Z, self.kernel) - 2.0 * row_means + self.total_mean
        return proj, norm2

    def score(self, Z):
        proj, norm2 = self.projections(Z)
        safe = np.where(norm2 > 1e-24, norm2, 1.0)
        s = 1.0 - (proj * proj).sum(axis=1) / safe
        return np.where(norm2 > 1e-24, np.clip(s, 0.0, 1.0), 0.0)

    def to_arrays(self):
        return {
            "X": self.X, "eigvals": self.eigvals, "coefs": self.coefs,
            "col_means": self.col_means, "total_mean": np.float64(self.total_mean),
        }

    @classmethod
    def from_arrays(cls, arrays, kernel):
        return cls(arrays["X"], kernel, arrays["eigvals"], arrays["coefs"],
                   arrays["col_means"], float(arrays["total_mean"]))


def center_gram(K):
    col = K.mean(axis=0)
    row = K.mean(axis=1)
    total = K.mean()
    Kc = K - row[:, None] - col[None, :] + total
    return (Kc + Kc.T) / 2.0, col, total


def fit_kpcand(X, kernel, q):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = len(X)
    if not 1 <= q <= n - 1:
        raise ValueError(f"q must lie in [1, n-1] = [1, {n - 1}], got {q}")
    Kc, col, total = center_gram(kernel_matrix(X, X, kernel))
    vals, vecs = np.linalg.eigh(Kc)
    order = np.argsort(-vals, kind="stable")[:q]
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > EIG_FLOOR
    if not keep.any():
        raise ArithmeticError("degenerate kernel: no eigenvalue above 1e-10")
    vals, vecs = vals[keep], vecs[:, keep]
    # sign convention: largest-magnitude coefficient positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    coefs = vecs / np.sqrt(vals)[None, :]
    return KpcaNdModel(X.copy(), kernel, vals, coefs, col, float(total))
