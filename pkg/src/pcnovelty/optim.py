"""Adaptive-moment (Adam) descent on flat parameter vectors."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(weights, grads, state, cfg):
    """One bias-corrected update. ``cfg`` needs ``learning_rate``, ``beta1``, ``beta2``, ``eps``.

    Returns new ``(weights, state)``; the inputs are not modified.
    """
    if weights.shape != grads.shape or state.m.shape != weights.shape:
        raise ValueError("weights, gradients and optimizer state differ in shape")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    mhat = m / (1.0 - cfg.beta1 ** t)
    vhat = v / (1.0 - cfg.beta2 ** t)
    new = weights - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
    return new, AdamState(m, v, t)
