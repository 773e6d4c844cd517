"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both backends are run on identical inputs and their outputs compared, so the
table doubles as an equivalence check.
"""

import argparse
import time

import numpy as np

from pcnovelty import kernels
from pcnovelty.geometry import NnIndex
from pcnovelty.one_class.ocsvm import initial_alpha


def _cases(rng):
    P = rng.normal(size=(512, 3))
    Q = rng.normal(size=(512, 3))
    idx = NnIndex(rng.normal(size=(2048, 3)))
    q = rng.normal(size=(2048, 3))
    tree = (idx.points, idx._perm, idx._split_dim, idx._split_val, idx._left, idx._right,
            idx._start, idx._stop, q)
    A = rng.uniform(-0.5, 0.5, size=(4, 3, 3))
    b = rng.uniform(-1, 1, size=(4, 3))
    choices = rng.integers(0, 4, size=20_000).astype(np.int64)
    X = rng.normal(size=(200, 8))
    K = np.exp(-0.1 * ((X[:, None] - X[None]) ** 2).sum(-1))

    def smo(mod):
        alpha, C = initial_alpha(len(K), 0.1)
        G = K @ alpha
        mod.smo_solve(K, C, alpha, G, 1e-6, 10_000_000)
        return alpha

    return {
        "nn_brute 512x512": lambda mod: mod.nn_brute(P, Q),
        "kdtree_query 2048 in 2048": lambda mod: mod.kdtree_query(*tree),
        "chaos_iterate 20000 steps": lambda mod: mod.chaos_iterate(A, b, choices, 100),
        "smo_solve n=200": smo,
    }


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.backends()
    if "compiled" not in backends:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python s':>12}{'compiled s':>12}{'speedup':>10}  identical")
    for name, fn in _cases(rng).items():
        t_py, out_py = _best(lambda: fn(backends["python"]), args.repeat)
        t_c, out_c = _best(lambda: fn(backends["compiled"]), args.repeat)
        print(f"{name:<28}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x  {_same(out_py, out_c)}")


if __name__ == "__main__":
    main()
