"""One-class SVM solved in the dual with pairwise (SMO) working-set steps.

    minimize  1/2 a^T K a   s.t.  0 <= a_i <= 1/(nu n),  sum a_i = 1

The decision value of z is ``sum_i a_i k(x_i, z) - rho``; the anomaly score
is its negation divided by the feature-space weight norm, so points outside
the learned region score positive.
"""

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ._kernel import KernelSpec, kernel_matrix

BOUND_TOL = 1e-12


class ConvergenceError(RuntimeError):
    pass


@dataclass
class OcSvmModel:
    support: np.ndarray  # (s, d) support vectors
    alpha: np.ndarray  # (s,)
    rho: float
    w_norm: float
    kernel: KernelSpec
    nu: float
    kind = "ocsvm"

    def decision(self, Z):
        return kernel_matrix(Z, self.support, self.kernel) @ self.alpha - self.rho

    def score(self, Z):
        return -self.decision(Z) / self.w_norm

    def to_arrays(self):
        return {
            "support": self.support, "alpha": self.alpha, "rho": np.float64(self.rho),
            "w_norm": np.float64(self.w_norm), "nu": np.float64(self.nu),
        }

    @classmethod
    def from_arrays(cls, arrays, kernel):
        return cls(arrays["support"], arrays["alpha"], float(arrays["rho"]),
                   float(arrays["w_norm"]), kernel, float(arrays["nu"]))


def initial_alpha(n, nu):
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    n_full = min(n, int(np.floor(nu * n)))
    alpha[:n_full] = C
    if n_full < n:
        alpha[n_full] = max(0.0, 1.0 - n_full * C)
    return alpha, C


def solve_dual(K, nu, tol=1e-6, max_iter=None):
    """SMO on a precomputed Gram matrix. Returns ``(alpha, G, rho)`` with G = K alpha."""
    n = len(K)
    K = np.ascontiguousarray((K + K.T) / 2.0)
    alpha, C = initial_alpha(n, nu)
    G = K @ alpha
    cap = int(max_iter if max_iter is not None else 100_000 * n)
    n_iter, gap = kernels.smo_solve(K, C, alpha, G, tol, cap)
    if n_iter >= cap and gap >= tol:
        raise ConvergenceError(f"SMO did not converge in {cap} iterations (KKT gap {gap:.3g})")
    G = K @ alpha
    free = (alpha > BOUND_TOL) & (alpha < C - BOUND_TOL)
    if free.any():
        rho = float(G[free].mean())
    else:
        at_upper = alpha >= C - BOUND_TOL
        at_lower = alpha <= BOUND_TOL
        hi = G[at_lower].min() if at_lower.any() else G.max()
        lo = G[at_upper].max() if at_upper.any() else G.min()
        rho = float((hi + lo) / 2.0)
    return alpha, G, rho


def fit_ocsvm(X, nu, kernel, tol=1e-6, max_iter=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = len(X)
    if n < 2:
        raise ValueError("OC-SVM needs at least 2 training points")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    K = kernel_matrix(X, X, kernel)
    alpha, G, rho = solve_dual(K, nu, tol, max_iter)
    w_norm = float(np.sqrt(max(alpha @ G, 0.0)))
    if not w_norm > 0:
        raise ArithmeticError("degenerate OC-SVM solution (zero weight norm)")
    sv = alpha > 0
    return OcSvmModel(X[sv].copy(), alpha[sv].copy(), rho, w_norm, kernel, float(nu))


def dual_objective(K, alpha):
    return 0.5 * float(alpha @ K @ alpha)
