"""``pcnovelty`` command line: generate, train, extract, fit, score, evaluate.

Exit status is 0 on success, 1 on usage errors and 2 when reading data or
computing fails. Every option can also come from a ``key=value`` file given
with ``--config``; flags on the command line win.
"""

import argparse
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

log = logging.getLogger("pcnovelty")

KIND_CHOICES = ("ocsvm", "kpcand", "deepsvdd", "gods")
GLOBAL_OPTIONS = {"threads": (int, 1), "log": (str, "INFO")}

# (name, type, default); default REQUIRED marks a mandatory option
REQUIRED = object()
COMMANDS = {
    "gen-fractal": [
        ("classes", int, REQUIRED), ("per-class", int, REQUIRED), ("seed", int, 0),
        ("out", str, REQUIRED), ("points", int, 2048), ("noise-ratio", float, 0.2),
        ("variance-threshold", float, 0.05),
    ],
    "train-ae": [
        ("manifest", str, REQUIRED), ("epochs", int, 300), ("lr", float, 1e-4),
        ("seed", int, 0), ("out", str, REQUIRED), ("batch-size", int, 16),
        ("points", int, 2048), ("latent-dim", int, 512), ("knn-k", int, 16),
        ("grid-side", int, 45), ("point-widths", "ints", "64,64,64"),
        ("graph-widths", "ints", "128,1024"), ("head-widths", "ints", "512"),
        ("fold-widths", "ints", "512,512"),
    ],
    "extract": [
        ("ckpt", str, REQUIRED), ("manifest", str, REQUIRED), ("out", str, REQUIRED),
        ("points", int, 2048), ("seed", int, 0),
    ],
    "fit": [
        ("kind", KIND_CHOICES, REQUIRED), ("bank", str, REQUIRED), ("params", str, ""),
        ("out", str, REQUIRED), ("seed", int, 0), ("normal-classes", "strs", ""),
    ],
    "score": [("model", str, REQUIRED), ("bank", str, REQUIRED), ("out", str, REQUIRED)],
    "evaluate": [
        ("bank", str, REQUIRED), ("anomaly-class", str, REQUIRED),
        ("kinds", "strs", ",".join(KIND_CHOICES)), ("seed", int, 0), ("out", str, REQUIRED),
        ("format", ("text", "csv"), "text"), ("ckpt", str, ""), ("manifest", str, ""),
        ("points", int, 2048),
    ],
    "benchmark": [
        ("bank", str, REQUIRED), ("kinds", "strs", ",".join(KIND_CHOICES)), ("seed", int, 0),
        ("out", str, REQUIRED), ("format", ("text", "csv"), "text"), ("ckpt", str, ""),
        ("manifest", str, ""), ("points", int, 2048),
    ],
    "project": [("bank", str, REQUIRED), ("out", str, REQUIRED)],
}


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, source, cause):
        where = f" ({source})" if source else ""
        super().__init__(f"{stage}{where}: {type(cause).__name__}: {cause}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _convert(kind, raw, name):
    try:
        if kind == "ints":
            return tuple(int(t) for t in str(raw).split(",") if t.strip())
        if kind == "strs":
            return tuple(t.strip() for t in str(raw).split(",") if t.strip())
        if isinstance(kind, tuple):
            if raw not in kind:
                raise ValueError(f"expected one of {', '.join(kind)}")
            return raw
        return kind(raw)
    except ValueError as exc:
        raise UsageError(f"--{name}: invalid value {raw!r}: {exc}") from None


def _add_globals(parser, default):
    # accepted before or after the subcommand; SUPPRESS keeps the subparser
    # from overwriting a value given before it
    parser.add_argument("--threads", default=default, help="worker threads for numerical libraries (default 1)")
    parser.add_argument("--log", default=default, help="log level (default INFO)")
    parser.add_argument("--config", default=default, help="key=value run configuration file")


def build_parser():
    parser = _Parser(prog="pcnovelty", description="Point-cloud novelty detection pipeline.")
    _add_globals(parser, None)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, options in COMMANDS.items():
        p = sub.add_parser(command)
        _add_globals(p, argparse.SUPPRESS)
        for name, kind, default in options:
            shown = "required" if default is REQUIRED else f"default {default}"
            choices = f"; one of {', '.join(kind)}" if isinstance(kind, tuple) else ""
            p.add_argument(f"--{name}", dest=name, help=f"{shown}{choices}")
    return parser


def read_run_config(path):
    """Parse a ``key=value`` file; '#' starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}: line {lineno}: expected key=value")
        out[key.strip().replace("_", "-")] = value.strip()
    return out


def resolve_config(args):
    """Merge defaults, config file and flags into one flat dict."""
    options = {name: (kind, default) for name, kind, default in COMMANDS[args.command]}
    options.update(GLOBAL_OPTIONS)
    raw = {}
    if args.config:
        file_values = read_run_config(args.config)
        unknown = sorted(set(file_values) - set(options))
        if unknown:
            raise UsageError(f"{args.config}: unknown keys for {args.command}: {', '.join(unknown)}")
        raw.update(file_values)
    for name in options:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    resolved = {}
    for name, (kind, default) in options.items():
        if name in raw:
            resolved[name] = _convert(kind, raw[name], name)
        elif default is REQUIRED:
            raise UsageError(f"{args.command}: missing required option --{name}")
        else:
            resolved[name] = _convert(kind, default, name)
    if resolved["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return resolved


@contextmanager
def stage(name, source=None):
    try:
        yield
    except (UsageError, StageError):
        raise
    except (OSError, ValueError, ArithmeticError, RuntimeError, KeyError) as exc:
        raise StageError(name, source, exc) from exc


def _limit_threads(n):
    # effective only before the numerical libraries start their pools
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_fractal(cfg):
    from .dataset_io import write_manifest, write_pcb
    from .fractal import FractalConfig, generate_fractal_dataset

    out = Path(cfg["out"])
    with stage("generate fractal dataset"):
        fcfg = FractalConfig(points_per_cloud=cfg["points"], noise_ratio=cfg["noise-ratio"],
                             variance_threshold=cfg["variance-threshold"])
        data = generate_fractal_dataset(cfg["classes"], cfg["per-class"], fcfg, cfg["seed"])
    with stage("write fractal dataset", out):
        out.mkdir(parents=True, exist_ok=True)
        records, counters = [], {}
        for cloud, label in zip(data.clouds, data.labels):
            k = counters.get(label, 0)
            counters[label] = k + 1
            rel = f"class_{label:04d}/sample_{k:04d}.pcb"
            (out / rel).parent.mkdir(exist_ok=True)
            write_pcb(out / rel, cloud)
            records.append((rel, f"class_{label:04d}"))
        write_manifest(out / "manifest.csv", records)
    log.info("wrote %d clouds and %s", len(records), out / "manifest.csv")


def _item_rng(seed, item_id):
    import numpy as np

    from .dataset_io import stable_key

    return np.random.default_rng(np.random.SeedSequence([int(seed), stable_key(item_id)]))


def cmd_train_ae(cfg):
    from .autoencoder import ArchSpec, TrainConfig, prepare_input, save_checkpoint, train_autoencoder
    from .dataset_io import read_manifest

    with stage("read manifest", cfg["manifest"]):
        dataset = read_manifest(cfg["manifest"])
        clouds = [prepare_input(c, cfg["points"], _item_rng(cfg["seed"], i)) for i, _, c in dataset]
    with stage("configure autoencoder"):
        arch = ArchSpec(cfg["latent-dim"], cfg["knn-k"], cfg["point-widths"], cfg["graph-widths"],
                        cfg["head-widths"], cfg["grid-side"], cfg["fold-widths"])
        tcfg = TrainConfig(learning_rate=cfg["lr"], epochs=cfg["epochs"],
                           batch_size=cfg["batch-size"], seed=cfg["seed"])
    log.info("training on %d clouds, %d parameters", len(clouds), arch.n_params())
    # wall-clock data goes to a sidecar log so the checkpoint stays reproducible
    sidecar = []
    start = time.time()

    def on_epoch(epoch, loss):
        sidecar.append(f"epoch={epoch} loss={loss!r} elapsed={time.time() - start:.3f}")

    with stage("train autoencoder", cfg["manifest"]):
        params = train_autoencoder(clouds, arch, tcfg, on_epoch=on_epoch)
    with stage("write checkpoint", cfg["out"]):
        save_checkpoint(cfg["out"], params)
        Path(str(cfg["out"]) + ".log").write_text("\n".join(sidecar) + "\n", encoding="utf-8")
    log.info("fingerprint %s, final loss %.6f", params.fingerprint(), params.history[-1])


def cmd_extract(cfg):
    from .autoencoder import extract_latents, load_checkpoint
    from .dataset_io import read_manifest, save_latent_bank

    with stage("load checkpoint", cfg["ckpt"]):
        params = load_checkpoint(cfg["ckpt"])
    with stage("read manifest", cfg["manifest"]):
        dataset = read_manifest(cfg["manifest"])
    with stage("extract latents", cfg["manifest"]):
        bank = extract_latents(params, dataset, n_points=cfg["points"], seed=cfg["seed"])
    with stage("write latent bank", cfg["out"]):
        save_latent_bank(cfg["out"], bank)
    log.info("wrote %d x %d latents, extractor %s", len(bank), bank.dim, bank.fingerprint)


def _load_bank(path):
    from .dataset_io import load_latent_bank

    with stage("load latent bank", path):
        return load_latent_bank(path)


def cmd_fit(cfg):
    from . import one_class

    bank = _load_bank(cfg["bank"])
    params = {}
    for item in filter(None, (t.strip() for t in cfg["params"].split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--params: expected key=value, got {item!r}")
        params[key.strip()] = value.strip()
    try:
        params = one_class.resolve_params(cfg["kind"], params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = list(range(len(bank)))
    if cfg["normal-classes"]:
        unknown = sorted(set(cfg["normal-classes"]) - set(bank.classes))
        if unknown:
            raise UsageError(f"unknown classes {', '.join(unknown)}; valid classes: {', '.join(bank.classes)}")
        rows = [i for i, lab in enumerate(bank.labels) if lab in cfg["normal-classes"]]
    with stage(f"fit {cfg['kind']}", cfg["bank"]):
        model = one_class.fit(cfg["kind"], bank.rows[rows], params, cfg["seed"])
    with stage("write model", cfg["out"]):
        one_class.save_model(cfg["out"], model)
    log.info("fitted %s on %d rows", cfg["kind"], len(rows))


def cmd_score(cfg):
    from . import one_class

    with stage("load model", cfg["model"]):
        model = one_class.load_model(cfg["model"])
    bank = _load_bank(cfg["bank"])
    with stage("score", cfg["bank"]):
        scores = model.score(bank.rows)
    lines = ["# scores: higher = more anomalous", "id,class,score"]
    lines += [f"{i},{lab},{float(s)!r}" for i, lab, s in zip(bank.ids, bank.labels, scores)]
    with stage("write scores", cfg["out"]):
        Path(cfg["out"]).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _baseline(cfg, bank):
    """Reconstruction-loss scores when a checkpoint and manifest are given."""
    if not cfg["ckpt"] and not cfg["manifest"]:
        return None
    if not (cfg["ckpt"] and cfg["manifest"]):
        raise UsageError("the reconstruction baseline needs both --ckpt and --manifest")
    from .autoencoder import load_checkpoint, reconstruction_scores
    from .dataset_io import check_fingerprint, read_manifest

    with stage("load checkpoint", cfg["ckpt"]):
        params = load_checkpoint(cfg["ckpt"])
    check_fingerprint(bank, params.fingerprint())
    with stage("read manifest", cfg["manifest"]):
        dataset = read_manifest(cfg["manifest"])
    with stage("reconstruction baseline", cfg["manifest"]):
        scores = reconstruction_scores(params, dataset, n_points=cfg["points"], seed=cfg["seed"])
    missing = [i for i in bank.ids if i not in scores]
    if missing:
        raise StageError("reconstruction baseline", cfg["manifest"],
                         KeyError(f"{len(missing)} bank ids not in manifest, e.g. {missing[0]!r}"))
    return scores


def _report(cfg, classes=None):
    from .evaluation import benchmark_bank

    bank = _load_bank(cfg["bank"])
    bad = sorted(set(cfg["kinds"]) - set(KIND_CHOICES))
    if bad or not cfg["kinds"]:
        raise UsageError(f"--kinds: unknown {', '.join(bad) or '(empty)'}; expected from {', '.join(KIND_CHOICES)}")
    if classes is not None and classes[0] not in bank.classes:
        raise UsageError(f"unknown anomaly class {classes[0]!r}; valid classes: {', '.join(bank.classes)}")
    baseline = _baseline(cfg, bank)
    with stage("leave-one-class-out evaluation", cfg["bank"]):
        report = benchmark_bank(bank, cfg["kinds"], cfg["seed"], baseline=baseline, classes=classes)
    text = report.to_csv() if cfg["format"] == "csv" else report.to_text()
    with stage("write report", cfg["out"]):
        Path(cfg["out"]).write_text(text, encoding="utf-8")
    log.info("report written to %s", cfg["out"])
    for line in report.to_text().splitlines():
        if not line.startswith("#"):
            log.info("%s", line)


def cmd_evaluate(cfg):
    _report(cfg, [cfg["anomaly-class"]])


def cmd_benchmark(cfg):
    _report(cfg)


def cmd_project(cfg):
    from .evaluation import project_2d

    bank = _load_bank(cfg["bank"])
    with stage("project", cfg["bank"]):
        xy = project_2d(bank)
    lines = ["id,class,x,y"] + [
        f"{i},{lab},{float(x)!r},{float(y)!r}" for i, lab, (x, y) in zip(bank.ids, bank.labels, xy)
    ]
    with stage("write projection", cfg["out"]):
        Path(cfg["out"]).write_text("\n".join(lines) + "\n", encoding="utf-8")


HANDLERS = {
    "gen-fractal": cmd_gen_fractal, "train-ae": cmd_train_ae, "extract": cmd_extract,
    "fit": cmd_fit, "score": cmd_score, "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark, "project": cmd_project,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        level = getattr(logging, cfg["log"].upper(), None)
        if not isinstance(level, int):
            raise UsageError(f"--log: unknown level {cfg['log']!r}")
    except UsageError as exc:
        print(f"pcnovelty: usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    _limit_threads(cfg["threads"])
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False
    log.info("%s resolved config: %s", args.command,
             " ".join(f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}"
                      for k, v in sorted(cfg.items())))
    try:
        HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"pcnovelty {args.command}: usage error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"pcnovelty {args.command}: error in {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
