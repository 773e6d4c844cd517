"""Leave-one-class-out novelty benchmark.

Every class in turn is the anomaly; classifiers train on the normal classes'
training items, pick hyperparameters by validation AUC and are scored by test
AUC. Validation sets contain normal and anomaly items, like the test sets.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import one_class
from .dataset_io import stable_key

SPLITS = ("train", "validation", "test")


# ---------------------------------------------------------------------------
# splits and tasks


def split_sizes(n):
    """7:1:2 floor allocation; leftover items go to train, then test, then validation."""
    sizes = [n * 7 // 10, n // 10, n * 2 // 10]
    for i in range(n - sum(sizes)):
        sizes[(0, 2, 1)[i]] += 1
    return tuple(sizes)


@dataclass
class SplitAssignment:
    """Per-class dataset indices of the train / validation / test items."""

    train: dict
    validation: dict
    test: dict

    def indices(self, split, classes=None):
        part = getattr(self, split)
        keys = sorted(part) if classes is None else classes
        return np.array(sorted(i for k in keys for i in part[k]), dtype=np.int64)


def split_dataset(dataset, seed):
    """Shuffle each class under ``seed`` and cut it 7:1:2.

    Items are ordered by id before shuffling, so assignments depend only on
    ids, labels and the seed, never on dataset order.
    """
    by_class = {}
    for i, (item_id, label) in enumerate(zip(dataset.ids, dataset.labels)):
        by_class.setdefault(label, []).append((item_id, i))
    out = {s: {} for s in SPLITS}
    for label in sorted(by_class):
        members = sorted(by_class[label])
        if len(members) < 3:
            raise ValueError(f"class {label!r} has {len(members)} samples; at least 3 are needed")
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), stable_key(label)]))
        order = [members[k][1] for k in rng.permutation(len(members))]
        n_train, n_val, _ = split_sizes(len(order))
        out["train"][label] = sorted(order[:n_train])
        out["validation"][label] = sorted(order[n_train:n_train + n_val])
        out["test"][label] = sorted(order[n_train + n_val:])
    return SplitAssignment(out["train"], out["validation"], out["test"])


@dataclass
class NoveltyTask:
    anomaly_class: str
    normal_classes: list
    train: np.ndarray  # indices, normal classes only
    validation: np.ndarray
    validation_anomaly: np.ndarray  # bool per validation index
    test: np.ndarray
    test_anomaly: np.ndarray


def make_novelty_task(dataset, splits, anomaly_class):
    labels = list(dataset.labels)
    classes = sorted(set(labels))
    if anomaly_class not in classes:
        raise KeyError(f"unknown class {anomaly_class!r}; valid classes: {', '.join(classes)}")
    normal = [c for c in classes if c != anomaly_class]
    train = splits.indices("train", normal)
    val = splits.indices("validation")
    test = splits.indices("test")
    task = NoveltyTask(
        anomaly_class, normal, train,
        val, np.array([labels[i] == anomaly_class for i in val], dtype=bool),
        test, np.array([labels[i] == anomaly_class for i in test], dtype=bool),
    )
    assert not any(labels[i] == anomaly_class for i in task.train)
    return task


# ---------------------------------------------------------------------------
# AUC


def auc(scores_normal, scores_anomaly):
    """Probability that an anomaly outscores a normal item, ties counting half."""
    sn = np.sort(np.asarray(scores_normal, dtype=np.float64))
    sa = np.asarray(scores_anomaly, dtype=np.float64)
    if len(sn) == 0 or len(sa) == 0:
        raise ValueError("auc needs at least one normal and one anomaly score")
    below = np.searchsorted(sn, sa, side="left")
    at_or_below = np.searchsorted(sn, sa, side="right")
    # twice the Mann-Whitney U, kept as an exact integer
    u2 = 2 * int(below.sum()) + int((at_or_below - below).sum())
    return u2 / (2 * len(sn) * len(sa))


def task_auc(scores, is_anomaly):
    scores = np.asarray(scores)
    return auc(scores[~is_anomaly], scores[is_anomaly])


# ---------------------------------------------------------------------------
# grid search


def default_grid(kind, X_train):
    """Hyperparameter grid in declaration order (ties resolve to the earliest point)."""
    if kind == "ocsvm":
        return [{"nu": nu, "gamma": 2.0 ** e} for nu in (0.01, 0.05, 0.1, 0.2, 0.5) for e in range(-9, 4)]
    if kind == "kpcand":
        med = one_class.median_distance(X_train)
        return [{"sigma": f * med, "q": q} for f in (0.5, 1, 2, 4, 8) for q in (8, 16, 32, 64, 128)]
    if kind == "deepsvdd":
        return [{"nu": nu, "epochs": ep} for nu in (0.05, 0.1, 0.2) for ep in (50, 150)]
    if kind == "gods":
        return [{"eta": eta, "lam": lam, "m": m} for eta in (0.1, 1.0, 10.0) for lam in (1e-3, 1e-2) for m in (2, 5, 10)]
    raise ValueError(f"unknown classifier kind {kind!r}")


@dataclass
class GridResult:
    best_params: dict
    validation_auc: float
    trials: list  # (params, auc or None, error message or None)


def grid_search(task, X, kind, grid=None, seed=0):
    X = np.asarray(X, dtype=np.float64)
    X_train = X[task.train]
    grid = default_grid(kind, X_train) if grid is None else list(grid)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    X_val = X[task.validation]
    trials = []
    best = None
    for params in grid:
        try:
            model = one_class.fit(kind, X_train, params, seed)
            value = task_auc(model.score(X_val), task.validation_anomaly)
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            trials.append((params, None, f"{type(exc).__name__}: {exc}"))
            continue
        trials.append((params, value, None))
        if best is None or value > best[1]:
            best = (params, value)
    if best is None:
        causes = "; ".join(f"{p}: {err}" for p, _, err in trials)
        raise RuntimeError(f"every {kind} grid point failed: {causes}")
    return GridResult(dict(best[0]), best[1], trials)


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkReport:
    classes: list
    columns: list
    auc: dict  # (class, column) -> test AUC
    selected: dict = field(default_factory=dict)  # (class, kind) -> (params, validation AUC)
    metadata: dict = field(default_factory=dict)

    def average(self, column):
        return math.fsum(self.auc[(c, column)] for c in self.classes) / len(self.classes)

    def to_text(self):
        width = max([len("anomaly class"), len("average")] + [len(c) for c in self.classes]) + 2
        colw = max(10, max(len(c) for c in self.columns) + 2)
        out = io.StringIO()
        out.write("# novelty detection test AUC; scores: higher = more anomalous\n")
        for key, value in self.metadata.items():
            out.write(f"# {key}: {value}\n")
        out.write("anomaly class".ljust(width) + "".join(c.rjust(colw) for c in self.columns) + "\n")
        for cls in self.classes:
            out.write(cls.ljust(width) + "".join(f"{self.auc[(cls, c)]:.3f}".rjust(colw) for c in self.columns) + "\n")
        out.write("average".ljust(width) + "".join(f"{self.average(c):.3f}".rjust(colw) for c in self.columns) + "\n")
        if self.selected:
            out.write("# selected hyperparameters (validation AUC)\n")
            for (cls, kind), (params, val) in sorted(self.selected.items()):
                shown = ", ".join(f"{k}={v:.6g}" for k, v in sorted(params.items()))
                out.write(f"# {cls} {kind}: {shown} ({val:.6f})\n")
        return out.getvalue()

    def to_csv(self):
        out = io.StringIO()
        out.write("# scores: higher = more anomalous\n")
        out.write(",".join(["anomaly_class"] + list(self.columns)) + "\n")
        for cls in self.classes:
            out.write(",".join([cls] + [f"{self.auc[(cls, c)]:.6f}" for c in self.columns]) + "\n")
        out.write(",".join(["average"] + [f"{self.average(c):.6f}" for c in self.columns]) + "\n")
        return out.getvalue()


def benchmark_bank(bank, kinds, seed=0, grids=None, baseline=None, classes=None):
    """Run the leave-one-class-out protocol on a latent bank.

    ``baseline`` optionally maps item id to a reconstruction-loss score, which
    adds a "baseline" column. ``grids`` maps kind to an explicit grid.
    """
    kinds = list(kinds)
    for kind in kinds:
        one_class.resolve_params(kind, {})
    if len(bank.classes) < 2:
        raise ValueError("benchmark needs at least two classes")
    splits = split_dataset(bank, seed)
    columns = (["baseline"] if baseline is not None else []) + kinds
    report = BenchmarkReport(list(classes or bank.classes), columns, {})
    report.metadata["extractor"] = bank.fingerprint or "unknown"
    report.metadata["seed"] = str(seed)
    report.metadata["items"] = str(len(bank))
    labels = bank.labels
    for cls in report.classes:
        task = make_novelty_task(bank, splits, cls)
        if any(labels[i] == cls for i in task.train):
            raise AssertionError(f"anomaly class {cls!r} leaked into the training set")
        if baseline is not None:
            scores = np.array([baseline[bank.ids[i]] for i in task.test])
            report.auc[(cls, "baseline")] = task_auc(scores, task.test_anomaly)
        for kind in kinds:
            try:
                grid = grid_search(task, bank.rows, kind, (grids or {}).get(kind), seed)
                model = one_class.fit(kind, bank.rows[task.train], grid.best_params, seed)
                value = task_auc(model.score(bank.rows[task.test]), task.test_anomaly)
            except Exception as exc:
                raise RuntimeError(f"anomaly class {cls!r}, classifier {kind}: {exc}") from exc
            report.auc[(cls, kind)] = value
            report.selected[(cls, kind)] = (grid.best_params, grid.validation_auc)
    return report


def run_benchmark(dataset, extractor_params, classifier_kinds, seed=0, n_points=None, grids=None):
    """Extract latents once with the frozen extractor, then benchmark them.

    The reconstruction-loss score of the same autoencoder is reported as the
    "baseline" column.
    """
    from .autoencoder import extract_latents, reconstruction_scores

    bank = extract_latents(extractor_params, dataset, n_points=n_points, seed=seed)
    baseline = reconstruction_scores(extractor_params, dataset, n_points=n_points, seed=seed)
    return benchmark_bank(bank, classifier_kinds, seed, grids, baseline)


# ---------------------------------------------------------------------------
# 2D view


def project_2d(bank):
    """Mean-centered projection onto the two leading principal axes."""
    X = bank.rows if hasattr(bank, "rows") else np.asarray(bank, dtype=np.float64)
    if len(X) < 3:
        raise ValueError("need at least 3 items")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / len(X)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:2]
    vals, vecs = vals[order], vecs[:, order]
    if vals[1] <= 1e-12 * max(vals[0], 1e-300):
        raise ValueError("rank < 2")
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, [0, 1]])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    return Xc @ vecs
