"""Latent-space one-class classifiers.

Every fitted model has ``score(Z) -> ndarray`` where higher means more
anomalous. ``fit(kind, X, params, seed)`` builds any of the four kinds from a
flat hyperparameter dict, which is what grid search and the CLI use.
"""

from ._kernel import KernelSpec, kernel_matrix, median_distance
from .deepsvdd import DeepSvddConfig, DeepSvddModel, fit_deepsvdd
from .gods import GodsConfig, GodsModel, fit_gods
from .kpcand import KpcaNdModel, fit_kpcand
from .modelio import decode_model, encode_model, load_model, save_model
from .ocsvm import ConvergenceError, OcSvmModel, fit_ocsvm

KINDS = ("ocsvm", "kpcand", "deepsvdd", "gods")

# accepted keys per kind; values are the defaults
PARAM_DEFAULTS = {
    "ocsvm": {"nu": 0.1, "gamma": 2.0 ** -5},
    "kpcand": {"sigma": 1.0, "q": 8},
    "deepsvdd": {"nu": 0.1, "epochs": 50, "lr": 1e-3},
    "gods": {"eta": 1.0, "lam": 1e-2, "m": 2, "iters": 500},
}


def resolve_params(kind, params):
    if kind not in KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}; expected one of {', '.join(KINDS)}")
    out = dict(PARAM_DEFAULTS[kind])
    for key, value in (params or {}).items():
        if key not in out:
            raise ValueError(f"unknown {kind} parameter {key!r}")
        out[key] = type(out[key])(value)
    return out


def fit(kind, X, params=None, seed=0):
    p = resolve_params(kind, params)
    if kind == "ocsvm":
        return fit_ocsvm(X, p["nu"], KernelSpec.rbf(p["gamma"]))
    if kind == "kpcand":
        return fit_kpcand(X, KernelSpec.gaussian(p["sigma"]), p["q"])
    if kind == "deepsvdd":
        return fit_deepsvdd(X, DeepSvddConfig(nu=p["nu"], epochs=p["epochs"], lr=p["lr"], seed=seed))
    return fit_gods(X, GodsConfig(m=p["m"], eta=p["eta"], lam=p["lam"], iters=p["iters"], seed=seed))


__all__ = [
    "KINDS", "PARAM_DEFAULTS", "ConvergenceError", "DeepSvddConfig", "DeepSvddModel",
    "GodsConfig", "GodsModel", "KernelSpec", "KpcaNdModel", "OcSvmModel", "decode_model",
    "encode_model", "fit", "fit_deepsvdd", "fit_gods", "fit_kpcand", "fit_ocsvm",
    "kernel_matrix", "load_model", "median_distance", "resolve_params", "save_model",
]
