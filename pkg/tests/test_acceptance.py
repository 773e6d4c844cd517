"""End-to-end acceptance checks. Each test prints one PASS/FAIL line.

Run just these with ``pytest tests/test_acceptance.py -v``; the lines are also
collected in the terminal summary.
"""

import math
import os
import re
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (
    exhaustive_chamfer, exhaustive_nn, fd_gradient_check, pair_count_auc, pca_novelty,
    reference_qp, relative_error,
)
from pcnovelty.autoencoder import ArchSpec, decode_checkpoint, encode_checkpoint, init_params, prepare, quantized
from pcnovelty.dataset_io import (
    FormatError, LatentBank, decode_latent_bank, decode_pcb, encode_latent_bank, encode_pcb,
)
from pcnovelty.evaluation import auc
from pcnovelty.geometry import NnIndex, chamfer, nn_correspondence, normalize_unit_sphere
from pcnovelty.one_class import KernelSpec, decode_model, encode_model, fit, fit_kpcand, fit_ocsvm, kernel_matrix
from pcnovelty.one_class.ocsvm import dual_objective, solve_dual

ROOT = Path(__file__).resolve().parents[1]


def _random_arch(rng):
    def widths(lo, hi, choices):
        return tuple(int(rng.choice(choices)) for _ in range(rng.integers(lo, hi + 1)))

    return ArchSpec(
        latent_dim=8, knn_k=int(rng.integers(2, 9)), point_widths=widths(1, 3, (4, 8, 12)),
        graph_widths=widths(1, 2, (8, 16)), head_widths=widths(0, 1, (8, 12)), grid_side=3,
        fold_widths=widths(1, 2, (8, 16)),
    )


def test_gradient_correctness(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, n_checked, n_skipped = 0.0, 0, 0
    for trial in range(24):
        arch = _random_arch(rng)
        params = init_params(arch, trial)
        clouds = [normalize_unit_sphere(rng.normal(size=(32, 3))) for _ in range(rng.integers(1, 3))]
        prepared = [prepare(c, arch.knn_k) for c in clouds]
        checked, skipped = fd_gradient_check(params, prepared, rng, per_layer=3)
        n_checked += len(checked)
        n_skipped += skipped
        worst = max([worst] + [relative_error(a, f) for _, a, f in checked])
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 120 and n_checked >= 20 * 24
    criterion(1, ok, f"24 archs, {n_checked} coordinates ({n_skipped} on kinks skipped), "
                     f"max rel err {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 120s)")


def test_chamfer_nn_oracle(criterion):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    mismatches = 0
    for trial in range(1000):
        n, m = rng.integers(1, 201, size=2)
        P = rng.normal(size=(n, 3))
        Q = rng.normal(size=(m, 3))
        if trial % 3 == 0:  # coarse grids force exact distance ties
            P, Q = np.round(P, 0), np.round(Q, 0)
        ref_idx, ref_dist = exhaustive_nn(Q, P)
        tree_idx, tree_dist = NnIndex(P, leaf_size=int(rng.integers(1, 9))).query(Q)
        scan_idx, scan_dist = nn_correspondence(Q, P)
        same = (np.array_equal(tree_idx, ref_idx) and np.array_equal(tree_dist, ref_dist)
                and np.array_equal(scan_idx, ref_idx) and np.array_equal(scan_dist, ref_dist))
        same = same and chamfer(P, Q) == exhaustive_chamfer(P, Q)
        mismatches += not same
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    criterion(2, ok, f"1000 instances, {mismatches} mismatches (exact), {elapsed:.1f}s (< 60s)")


def _increasing_maps(rng):
    maps = []
    for _ in range(5):
        table = np.cumsum(rng.uniform(0.01, 3.0, size=101))  # lookup on integer scores -50..50
        maps.append(lambda x, t=table: t[np.asarray(x, dtype=np.int64) + 50])
    a, b = rng.uniform(0.1, 2.0, size=2)
    maps += [
        lambda x: a * np.asarray(x, dtype=np.float64) ** 3 + b * np.asarray(x, dtype=np.float64),
        lambda x: np.exp(np.asarray(x, dtype=np.float64) / 10.0),
        lambda x: np.arctan(np.asarray(x, dtype=np.float64) / 20.0),
        lambda x: np.log(np.asarray(x, dtype=np.float64) + 51.0),
        lambda x: 3.0 * np.asarray(x, dtype=np.float64) - 7.0,
    ]
    return maps


def test_auc_oracle(criterion):
    rng = np.random.default_rng(11)
    maps = _increasing_maps(rng)
    exact_fail = invariance_fail = 0
    for trial in range(100):
        n, a = rng.integers(1, 60, size=2)
        spread = int(rng.choice([2, 5, 50]))  # small spreads give many ties
        normal = rng.integers(-spread, spread + 1, size=n)
        anomaly = rng.integers(-spread, spread + 1, size=a) + int(rng.integers(0, 3))
        anomaly = np.clip(anomaly, -50, 50)
        value = auc(normal, anomaly)
        exact_fail += value != float(pair_count_auc(normal.tolist(), anomaly.tolist()))
        values = np.unique(np.concatenate([normal, anomaly]))
        for f in maps:
            assert (np.diff(f(values)) > 0).all()  # strictly increasing on these scores
            invariance_fail += auc(f(normal), f(anomaly)) != value
    ok = exact_fail == 0 and invariance_fail == 0
    criterion(3, ok, f"100 score sets: {exact_fail} oracle mismatches, "
                     f"{invariance_fail} changes under 10 increasing maps (exact)")


def test_ocsvm_solver(criterion):
    rng = np.random.default_rng(3)
    worst_gap, nu_fail = 0.0, 0
    for _ in range(20):
        n = int(rng.integers(10, 51))
        X = rng.normal(size=(n, int(rng.integers(2, 6))))
        nu = float(rng.uniform(0.05, 0.9))
        kernel = KernelSpec.rbf(float(rng.uniform(0.05, 2.0)))
        K = kernel_matrix(X, X, kernel)
        alpha, _, _ = solve_dual(K, nu)
        _, ref = reference_qp(K, nu)
        worst_gap = max(worst_gap, abs(dual_objective(K, alpha) - ref))
        # nu-property on a tightly solved model; margin vectors sit within 1e-10 of zero
        model = fit_ocsvm(X, nu, kernel, tol=1e-10)
        outliers = float((model.decision(X) < -1e-8).mean())
        sv_fraction = len(model.alpha) / n
        nu_fail += not (outliers <= nu + 1.0 / n and sv_fraction >= nu - 1.0 / n)
    ok = worst_gap <= 1e-6 and nu_fail == 0
    criterion(4, ok, f"20 problems: max |objective - reference| {worst_gap:.2e} (<= 1e-6), "
                     f"{nu_fail} nu-property violations")


def test_kpcand_linear(criterion):
    rng = np.random.default_rng(5)
    worst_eig = worst_score = worst_train = 0.0
    for _ in range(10):
        n = int(rng.integers(5, 31))
        d = int(rng.integers(2, 40))
        X = rng.normal(size=(n, d))
        Z = rng.normal(size=(10, d))
        rank = min(n - 1, d)
        for q in sorted({1, int(rng.integers(1, rank + 1)), rank}):
            model = fit_kpcand(X, KernelSpec.linear(), q)
            eig, scores = pca_novelty(X, Z, q)
            worst_eig = max(worst_eig, np.abs(model.eigvals - eig[:q]).max())
            worst_score = max(worst_score, np.abs(model.score(Z) - scores).max())
        full = fit_kpcand(X, KernelSpec.linear(), rank)
        worst_train = max(worst_train, np.abs(full.score(X)).max())
    ok = worst_eig <= 1e-8 and worst_score <= 1e-8 and worst_train <= 1e-6
    criterion(5, ok, f"10 problems: eigenvalue err {worst_eig:.1e}, score err {worst_score:.1e} "
                     f"(<= 1e-8); training scores at full rank {worst_train:.1e} (<= 1e-6)")


# ---------------------------------------------------------------------------
# synthetic end-to-end benchmark through the command line

AE_FLAGS = ["--epochs", "80", "--lr", "1e-3", "--seed", "0", "--points", "256", "--latent-dim", "64",
            "--grid-side", "16", "--point-widths", "32,32,32", "--graph-widths", "64,256",
            "--head-widths", "128", "--fold-widths", "128,128"]
KINDS = ("ocsvm", "kpcand", "deepsvdd", "gods")


def _cli(*args):
    cmd = [sys.executable, "-m", "pcnovelty.cli", "--log", "WARNING", *map(str, args)]
    subprocess.run(cmd, check=True)


def run_synthetic_benchmark(work):
    """Train on a 20-class fractal corpus, benchmark 3 unseen classes. Returns the report path."""
    work = Path(work)
    _cli("gen-fractal", "--classes", 20, "--per-class", 10, "--seed", 1, "--points", 256, "--out", work / "train")
    _cli("gen-fractal", "--classes", 3, "--per-class", 60, "--seed", 0, "--points", 256, "--out", work / "eval")
    _cli("train-ae", "--manifest", work / "train" / "manifest.csv", "--out", work / "ae.paec", *AE_FLAGS)
    _cli("extract", "--ckpt", work / "ae.paec", "--manifest", work / "eval" / "manifest.csv",
         "--points", 256, "--out", work / "bank.ltb1")
    _cli("benchmark", "--bank", work / "bank.ltb1", "--ckpt", work / "ae.paec",
         "--manifest", work / "eval" / "manifest.csv", "--points", 256, "--seed", 0,
         "--kinds", ",".join(KINDS), "--out", work / "report.txt")
    return work / "report.txt"


def _averages(report_text):
    lines = report_text.splitlines()
    header = next(line for line in lines if line.startswith("anomaly class"))
    columns = header.split()[2:]
    avg = next(line for line in lines if line.startswith("average")).split()[1:]
    return dict(zip(columns, map(float, avg)))


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    start = time.perf_counter()
    report = run_synthetic_benchmark(tmp_path_factory.mktemp("bench_a"))
    return report, time.perf_counter() - start


@pytest.mark.slow
def test_synthetic_benchmark(synthetic_run, criterion):
    report, elapsed = synthetic_run
    avg = _averages(report.read_text())
    base = avg["baseline"]
    ok = (avg["ocsvm"] >= 0.80 and avg["kpcand"] >= 0.80 and all(avg[k] > base for k in KINDS)
          and elapsed < 30 * 60)
    shown = ", ".join(f"{k} {v:.3f}" for k, v in avg.items())
    criterion(6, ok, f"average AUC {shown}; OC-SVM/KPCA-ND >= 0.80, every classifier > baseline; "
                     f"{elapsed / 60:.1f} min (< 30)")


@pytest.mark.slow
def test_determinism(synthetic_run, tmp_path, criterion):
    first, _ = synthetic_run
    second = run_synthetic_benchmark(tmp_path)
    same = first.read_bytes() == second.read_bytes()
    criterion(7, same, "rerun with identical seeds: report bytes "
                       + ("identical" if same else "differ"))


# ---------------------------------------------------------------------------
# file formats


def _rejections(decode, data, magic_len=4):
    """Corrupted magic and every strict prefix must raise a positioned FormatError."""
    cases = [bytes([data[0] ^ 0xFF]) + data[1:]]
    cuts = sorted(set(np.linspace(0, len(data) - 1, 40).astype(int).tolist()) | {magic_len, len(data) - 1})
    cases += [data[:c] for c in cuts]
    failures = 0
    for bad in cases:
        try:
            decode(bad)
        except FormatError as exc:
            failures += exc.offset is None
        else:
            failures += 1
    return len(cases), failures


def test_format_round_trips(criterion):
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(257, 3)).astype(np.float32).astype(np.float64)
    pcb = encode_pcb(cloud)
    bank = LatentBank(rng.normal(size=(12, 16)).astype(np.float32).astype(np.float64),
                      [f"item{i}" for i in range(12)], ["a", "b", "c"] * 4, "0123abcd")
    ltb = encode_latent_bank(bank)
    params = quantized(init_params(ArchSpec(latent_dim=8, knn_k=4, point_widths=(8,), graph_widths=(8,),
                                            head_widths=(), grid_side=3, fold_widths=(8,)), 0))
    params.training_meta.update(epochs="1")
    paec = encode_checkpoint(params)
    models = [fit(kind, rng.normal(size=(20, 4)), {"deepsvdd": {"epochs": 3}, "gods": {"iters": 5}}.get(kind))
              for kind in KINDS]
    ocm = [encode_model(m) for m in models]

    round_trip = (
        decode_pcb(pcb).tobytes() == cloud.tobytes() and encode_pcb(decode_pcb(pcb)) == pcb
        and encode_latent_bank(decode_latent_bank(ltb)) == ltb
        and decode_latent_bank(ltb).rows.tobytes() == bank.rows.tobytes()
        and encode_checkpoint(decode_checkpoint(paec)) == paec
        and decode_checkpoint(paec).weights.tobytes() == params.weights.tobytes()
        and all(encode_model(decode_model(b)) == b for b in ocm)
    )
    total = failures = 0
    for decode, blob in [(decode_pcb, pcb), (decode_latent_bank, ltb), (decode_checkpoint, paec)] + \
            [(decode_model, b) for b in ocm]:
        n, f = _rejections(decode, blob)
        total += n
        failures += f
    ok = round_trip and failures == 0
    criterion(8, ok, f"PCB/LTB1/PAEC/OCM1 round trips {'bit-exact' if round_trip else 'differ'}; "
                     f"{total - failures}/{total} corrupted inputs rejected with a byte offset")


# ---------------------------------------------------------------------------
# reference comparison on user-supplied data (non-gating)


def test_reference_data_report(tmp_path, criterion):
    readme = (ROOT / "README.md").read_text()
    documented = "0.841" in readme and "0.868" in readme
    manifest = os.environ.get("PCNOVELTY_REFERENCE_MANIFEST")
    ckpt = os.environ.get("PCNOVELTY_REFERENCE_CKPT")
    if manifest and ckpt:
        _cli("extract", "--ckpt", ckpt, "--manifest", manifest, "--out", tmp_path / "bank.ltb1")
        _cli("benchmark", "--bank", tmp_path / "bank.ltb1", "--ckpt", ckpt, "--manifest", manifest,
             "--kinds", ",".join(KINDS), "--out", tmp_path / "report.txt")
        avg = _averages((tmp_path / "report.txt").read_text())
        detail = (f"reference data: OC-SVM {avg['ocsvm']:.3f} (ref 0.841), "
                  f"KPCA-ND {avg['kpcand']:.3f} (ref 0.868); non-gating")
        shaped = set(KINDS) <= set(avg) and "baseline" in avg
    else:
        # no data supplied: check the report shape on a seven-class stand-in bank
        rng = np.random.default_rng(0)
        labels = [f"class{k}" for k in range(7) for _ in range(10)]
        rows = rng.normal(size=(70, 8)) + np.repeat(np.eye(7, 8) * 3, 10, axis=0)
        from pcnovelty.dataset_io import save_latent_bank

        save_latent_bank(tmp_path / "bank.ltb1", LatentBank(rows, [f"i{i}" for i in range(70)], labels, "x"))
        _cli("benchmark", "--bank", tmp_path / "bank.ltb1", "--kinds", "ocsvm,kpcand",
             "--out", tmp_path / "report.txt")
        text = (tmp_path / "report.txt").read_text()
        shaped = len(re.findall(r"^class\d ", text, flags=re.M)) == 7 and "\naverage" in text
        detail = "no reference data supplied; seven-class report shape checked (non-gating)"
    ok = documented and shaped
    criterion(9, ok, detail + ("; README records 0.841 / 0.868" if documented else "; README lacks reference averages"))
