"""FoldingNet-style point-cloud autoencoder with hand-written reverse mode.

Encoder: per-point MLP on (xyz, 3x3 local covariance), graph max-pooling over
the k nearest neighbors, global max-pool, MLP to a bias-free latent layer.
Decoder: a 2D grid concatenated with the codeword is folded to 3D twice.

Parameters live in one flat float64 vector; ``ArchSpec.layers()`` fixes the
order and shapes (weights ``(in, out)`` then bias, per layer).

The encoder sorts input points lexicographically before anything else, which
makes the latent code bit-identical under any permutation of the input.
"""

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset_io import BinaryReader, FormatError, LatentBank, pack_string, stable_key
from .geometry import _chamfer_grad, as_cloud, chamfer, normalize_unit_sphere, resample
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

LEAK = 0.01
GRID_EXTENT = 0.3
PAEC_MAGIC = b"PAEC"
PAEC_VERSION = 1


@dataclass(frozen=True)
class ArchSpec:
    latent_dim: int = 512
    knn_k: int = 16
    point_widths: tuple = (64, 64, 64)
    graph_widths: tuple = (128, 1024)
    head_widths: tuple = (512,)
    grid_side: int = 45
    fold_widths: tuple = (512, 512)

    def __post_init__(self):
        for name in ("point_widths", "graph_widths", "head_widths", "fold_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.latent_dim < 1 or self.knn_k < 1:
            raise ValueError("latent_dim and knn_k must be >= 1")
        if self.grid_side < 2:
            raise ValueError("grid_side must be >= 2")
        if not self.point_widths or not self.graph_widths or not self.fold_widths:
            raise ValueError("need at least one point, graph and fold layer")
        widths = self.point_widths + self.graph_widths + self.head_widths + self.fold_widths
        if any(w < 1 for w in widths):
            raise ValueError("all widths must be >= 1")

    @property
    def n_grid(self):
        return self.grid_side * self.grid_side

    def layers(self):
        """``[(name, fan_in, fan_out, has_bias), ...]`` in declaration order."""
        out = []
        d = 12
        for i, w in enumerate(self.point_widths):
            out.append((f"enc.point{i}", d, w, True))
            d = w
        for i, w in enumerate(self.graph_widths):
            out.append((f"enc.graph{i}", d, w, True))
            d = w
        for i, w in enumerate(self.head_widths):
            out.append((f"enc.head{i}", d, w, True))
            d = w
        out.append(("enc.latent", d, self.latent_dim, False))
        for fold, extra in (("fold1", 2), ("fold2", 3)):
            d = extra + self.latent_dim
            for i, w in enumerate(self.fold_widths):
                out.append((f"{fold}.{i}", d, w, True))
                d = w
            out.append((f"{fold}.out", d, 3, True))
        return out

    def n_params(self):
        return sum(i * o + (o if b else 0) for _, i, o, b in self.layers())


def make_grid(side):
    t = np.linspace(-GRID_EXTENT, GRID_EXTENT, side)
    u, v = np.meshgrid(t, t, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=1)


def _slices(arch):
    out, off = {}, 0
    for name, fan_in, fan_out, has_bias in arch.layers():
        w = slice(off, off + fan_in * fan_out)
        off += fan_in * fan_out
        b = None
        if has_bias:
            b = slice(off, off + fan_out)
            off += fan_out
        out[name] = (w, b, fan_in, fan_out)
    return out


def _views(arch, flat):
    """``{name: (W, b)}`` views into ``flat`` (``b`` is None for bias-free layers)."""
    out = {}
    for name, (ws, bs, fi, fo) in _slices(arch).items():
        out[name] = (flat[ws].reshape(fi, fo), None if bs is None else flat[bs])
    return out


@dataclass
class AutoencoderParams:
    arch: ArchSpec
    weights: np.ndarray
    training_meta: dict = field(default_factory=dict)
    history: list = field(default_factory=list, compare=False)  # per-epoch mean loss

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.arch.n_params(),):
            raise ValueError(
                f"parameter count {self.weights.size} does not match architecture "
                f"({self.arch.n_params()})"
            )
        if not np.isfinite(self.weights).all():
            raise ValueError("non-finite weights")

    def layer(self, name):
        return _views(self.arch, self.weights)[name]

    def checksum(self):
        return hashlib.sha256(self.weights.tobytes()).hexdigest()

    def fingerprint(self):
        """Short identity of the extractor (architecture plus float32 weights)."""
        h = hashlib.sha256(_encode_arch(self.arch))
        h.update(self.weights.astype("<f4").tobytes())
        return h.hexdigest()[:16]

    def frozen(self):
        w = self.weights.copy()
        w.setflags(write=False)
        return AutoencoderParams(self.arch, w, dict(self.training_meta), list(self.history))


def init_params(arch, seed=0):
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    flat = np.zeros(arch.n_params())
    for name, (ws, _, fi, fo) in _slices(arch).items():
        lim = math.sqrt(6.0 / (fi + fo))
        flat[ws] = rng.uniform(-lim, lim, size=fi * fo)
    return AutoencoderParams(arch, flat)


# ---------------------------------------------------------------------------
# input preparation


def _knn(X, k):
    """Indices of the ``k`` nearest points of each row, ties to the lower index."""
    n = len(X)
    dx = X[:, 0, None] - X[None, :, 0]
    dy = X[:, 1, None] - X[None, :, 1]
    dz = X[:, 2, None] - X[None, :, 2]
    d2 = (dx * dx + dy * dy) + dz * dz
    if k >= n:
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1:k]
    rows, cols = np.nonzero(d2 <= kth)
    order = np.lexsort((cols, d2[rows, cols], rows))
    rows, cols = rows[order], cols[order]
    starts = np.searchsorted(rows, np.arange(n))
    take = starts[:, None] + np.arange(k)[None, :]
    return cols[take]


@dataclass
class Prepared:
    points: np.ndarray  # (N, 3) canonical order
    nbr: np.ndarray  # (N, k)
    features: np.ndarray  # (N, 12)


def prepare(cloud, k):
    X = as_cloud(cloud)
    if len(X) < k + 1:
        raise ValueError(f"encoder needs at least knn_k + 1 = {k + 1} points, got {len(X)}")
    X = np.ascontiguousarray(X[np.lexsort((X[:, 2], X[:, 1], X[:, 0]))])
    nbr = _knn(X, k)
    nb = X[nbr]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    feats = np.concatenate([X, cov.reshape(len(X), 9)], axis=1)
    return Prepared(X, nbr, feats)


# ---------------------------------------------------------------------------
# forward / backward


def _lrelu(a):
    return np.where(a > 0, a, LEAK * a)


def _dlrelu(a, g):
    return np.where(a > 0, g, LEAK * g)


def _graph_pool(h, nbr):
    B, N, C = h.shape
    out = np.empty_like(h)
    src = np.empty((B, N, C), dtype=np.int64)
    for b in range(B):
        gathered = h[b][nbr[b]]  # (N, k, C)
        j = gathered.argmax(axis=1)
        src[b] = nbr[b][np.arange(N)[:, None], j]
        out[b] = np.take_along_axis(gathered, j[:, None, :], axis=1)[:, 0, :]
    return out, src


def _graph_unpool(g, src):
    B, N, C = g.shape
    flat = (np.arange(B)[:, None, None] * N + src) * C + np.arange(C)[None, None, :]
    return np.bincount(flat.ravel(), weights=g.ravel(), minlength=B * N * C).reshape(B, N, C)


def _dense(x, W, b):
    y = x.reshape(-1, x.shape[-1]) @ W
    if b is not None:
        y += b
    return y.reshape(*x.shape[:-1], W.shape[1])


def _encode_batch(arch, L, feats, nbr, cache=None):
    h = feats
    for i in range(len(arch.point_widths)):
        W, b = L[f"enc.point{i}"]
        a = _dense(h, W, b)
        if cache is not None:
            cache.append(("dense", f"enc.point{i}", h, a))
        h = _lrelu(a)
    for i in range(len(arch.graph_widths)):
        h, src = _graph_pool(h, nbr)
        if cache is not None:
            cache.append(("pool", src))
        W, b = L[f"enc.graph{i}"]
        a = _dense(h, W, b)
        if cache is not None:
            cache.append(("dense", f"enc.graph{i}", h, a))
        h = _lrelu(a)
    arg = h.argmax(axis=1)  # (B, C)
    if cache is not None:
        cache.append(("gmax", arg, h.shape[1]))
    h = np.take_along_axis(h, arg[:, None, :], axis=1)[:, 0, :]
    for i in range(len(arch.head_widths)):
        W, b = L[f"enc.head{i}"]
        a = _dense(h, W, b)
        if cache is not None:
            cache.append(("dense", f"enc.head{i}", h, a))
        h = _lrelu(a)
    W, _ = L["enc.latent"]
    if cache is not None:
        cache.append(("linear", "enc.latent", h))
    return h @ W


def _fold(arch, L, fold, seeds, z, cache=None):
    """One folding MLP; ``seeds`` is (M, s) shared or (B, M, s) per item."""
    s = seeds.shape[-1]
    W0, b0 = L[f"{fold}.0"]
    a = _dense(seeds, W0[:s], None) + (z @ W0[s:])[:, None, :] + b0
    if cache is not None:
        cache.append(("fold_in", fold, seeds, z, a))
    h = _lrelu(a)
    names = [f"{fold}.{i}" for i in range(1, len(arch.fold_widths))]
    for name in names:
        W, b = L[name]
        a = _dense(h, W, b)
        if cache is not None:
            cache.append(("dense", name, h, a))
        h = _lrelu(a)
    W, b = L[f"{fold}.out"]
    out = _dense(h, W, b)
    if cache is not None:
        cache.append(("out", f"{fold}.out", h, out))
    return out


def _decode_batch(arch, L, z, cache1=None, cache2=None):
    grid = make_grid(arch.grid_side)
    S1 = _fold(arch, L, "fold1", grid, z, cache1)
    S2 = _fold(arch, L, "fold2", S1, z, cache2)
    return S1, S2


def _backprop(arch, L, G, cache, dout):
    """Walk ``cache`` backwards, accumulating into gradient views ``G``."""
    d = dout
    for entry in reversed(cache):
        kind = entry[0]
        if kind in ("dense", "out"):
            _, name, x, a = entry
            da = d if kind == "out" else _dlrelu(a, d)
            W, b = L[name]
            gW, gb = G[name]
            x2 = x.reshape(-1, x.shape[-1])
            da2 = da.reshape(-1, da.shape[-1])
            gW += x2.T @ da2
            gb += da2.sum(axis=0)
            d = (da2 @ W.T).reshape(x.shape)
        elif kind == "linear":
            _, name, x = entry
            W, _ = L[name]
            gW, _ = G[name]
            gW += x.T @ d
            d = d @ W.T
        elif kind == "gmax":
            _, arg, n = entry
            B, C = arg.shape
            full = np.zeros((B, n, C))
            np.put_along_axis(full, arg[:, None, :], d[:, None, :], axis=1)
            d = full
        elif kind == "pool":
            d = _graph_unpool(d, entry[1])
        else:
            raise AssertionError(kind)
    return d


def _fold_backward(arch, L, G, cache, dS):
    """Backprop through one fold; returns (d seeds, d z)."""
    _, fold, seeds, z, a0 = cache[0]
    d = _dlrelu(a0, _backprop(arch, L, G, cache[1:], dS))
    W0, _ = L[f"{fold}.0"]
    gW0, gb0 = G[f"{fold}.0"]
    s = seeds.shape[-1]
    dsum = d.sum(axis=1)  # (B, H)
    gW0[s:] += z.T @ dsum
    gb0 += dsum.sum(axis=0)
    if seeds.ndim == 2:
        gW0[:s] += seeds.T @ d.sum(axis=0)
        dseeds = None
    else:
        gW0[:s] += seeds.reshape(-1, s).T @ d.reshape(-1, d.shape[-1])
        dseeds = d @ W0[:s].T
    dz = dsum @ W0[s:].T
    return dseeds, dz


def _stack(prepared):
    return (
        np.stack([p.points for p in prepared]),
        np.stack([p.nbr for p in prepared]),
        np.stack([p.features for p in prepared]),
    )


def loss_and_grad(params, prepared, return_pattern=False):
    """Mean reconstruction loss over a batch and its gradient w.r.t. all weights.

    ``prepared`` is a list of ``Prepared`` inputs with equal point counts.
    Max-pool winners and Chamfer correspondences are those of this forward
    pass. With ``return_pattern`` a byte string identifying every discrete
    choice (activation signs, pool winners, correspondences) is also returned.
    """
    arch = params.arch
    L = _views(arch, params.weights)
    X, nbr, feats = _stack(prepared)
    B = len(X)
    enc_cache, c1, c2 = [], [], []
    z = _encode_batch(arch, L, feats, nbr, enc_cache)
    S1, S2 = _decode_batch(arch, L, z, c1, c2)

    total = 0.0
    dS1 = np.empty_like(S1)
    dS2 = np.empty_like(S2)
    corr = []
    for b in range(B):
        g1, l1, k1 = _chamfer_grad(np.ascontiguousarray(S1[b]), X[b])
        g2, l2, k2 = _chamfer_grad(np.ascontiguousarray(S2[b]), X[b])
        dS1[b] = g1 / B
        dS2[b] = g2 / B
        total += l1 + l2
        corr.extend(k1 + k2)

    grad = np.zeros_like(params.weights)
    G = _views(arch, grad)
    dS1_from2, dz2 = _fold_backward(arch, L, G, c2, dS2)
    _, dz1 = _fold_backward(arch, L, G, c1, dS1 + dS1_from2)
    _backprop(arch, L, G, enc_cache, dz1 + dz2)
    loss = total / B
    if not return_pattern:
        return loss, grad
    parts = []
    for entry in enc_cache + c1 + c2:
        if entry[0] in ("dense", "fold_in"):
            parts.append(np.packbits(entry[-1] > 0).tobytes())
        elif entry[0] in ("pool", "gmax"):
            parts.append(entry[1].tobytes())
    parts.extend(c.tobytes() for c in corr)
    return loss, grad, hashlib.sha256(b"".join(parts)).digest()


def backward(params, cloud):
    """Gradient of the reconstruction loss of one cloud w.r.t. every weight."""
    return loss_and_grad(params, [prepare(cloud, params.arch.knn_k)])[1]


def encode(params, cloud):
    """Latent vector of one cloud; invariant to the order of its points."""
    arch = params.arch
    p = prepare(cloud, arch.knn_k)
    z = _encode_batch(arch, _views(arch, params.weights), p.features[None], p.nbr[None])
    return z[0]


def decode(params, z):
    """Fold the grid twice: returns the coarse and refined reconstructions."""
    arch = params.arch
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (arch.latent_dim,):
        raise ValueError(f"latent has shape {z.shape}, expected ({arch.latent_dim},)")
    if not np.isfinite(z).all():
        raise ValueError("non-finite latent vector")
    S1, S2 = _decode_batch(arch, _views(arch, params.weights), z[None])
    return S1[0], S2[0]


def reconstruction_loss(S, S1, S2):
    return chamfer(S, S1) + chamfer(S, S2)


def reconstruction_score(params, cloud):
    """Chamfer reconstruction loss of ``cloud`` through the autoencoder."""
    S1, S2 = decode(params, encode(params, cloud))
    return reconstruction_loss(cloud, S1, S2)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 300
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def dataset_fingerprint(clouds):
    h = hashlib.sha256()
    for c in clouds:
        h.update(np.ascontiguousarray(c, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def train_autoencoder(clouds, arch=None, cfg=None, init=None, on_epoch=None):
    """Minibatch Adam on the mean reconstruction loss; returns frozen params.

    ``clouds`` must all have the same number of points. ``on_epoch(epoch,
    mean_loss)`` is called after every epoch.
    """
    arch = arch or ArchSpec()
    cfg = cfg or TrainConfig()
    clouds = [as_cloud(c) for c in clouds]
    if not clouds:
        raise ValueError("empty training set")
    if len({len(c) for c in clouds}) != 1:
        raise ValueError("training clouds must be resampled to a common size")
    prepared = [prepare(c, arch.knn_k) for c in clouds]
    params = init if init is not None else init_params(arch, cfg.seed)
    weights = params.weights.copy()
    state = AdamState.zeros(weights.size)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x7A1]))
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(prepared))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            batch = [prepared[i] for i in order[s:s + cfg.batch_size]]
            loss, grad = loss_and_grad(AutoencoderParams(arch, weights), batch)
            if not (math.isfinite(loss) and np.isfinite(grad).all()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {s // cfg.batch_size}: "
                    f"loss={loss}, {int((~np.isfinite(grad)).sum())} non-finite gradient entries"
                )
            weights, state = adam_step(weights, grad, state, cfg)
            losses.append(loss * len(batch))
        mean = math.fsum(losses) / len(prepared)
        history.append(mean)
        log.info("epoch %d/%d loss %.6f", epoch, cfg.epochs, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    meta = {
        "epochs": str(cfg.epochs),
        "final_loss": repr(history[-1]),
        "learning_rate": repr(cfg.learning_rate),
        "batch_size": str(cfg.batch_size),
        "seed": str(cfg.seed),
        "dataset": dataset_fingerprint(clouds),
    }
    return AutoencoderParams(arch, weights, meta, history).frozen()


def prepare_input(cloud, n_points=None, rng=None, normalize=True):
    """Normalize to the unit sphere and optionally resample to ``n_points``."""
    cloud = as_cloud(cloud)
    if n_points is not None:
        cloud = resample(cloud, n_points, rng)
    return normalize_unit_sphere(cloud) if normalize else cloud


def extract_latents(params, dataset, n_points=None, seed=0, normalize=True):
    """Encode every cloud of ``dataset`` with the frozen extractor.

    Resampling (when ``n_points`` is set) uses a random stream keyed by the
    item id, so each item's vector does not depend on dataset order.
    """
    rows = []
    for item_id, _, cloud in dataset:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), stable_key(item_id)]))
        rows.append(encode(params, prepare_input(cloud, n_points, rng, normalize)))
    rows = np.asarray(rows).reshape(len(rows), params.arch.latent_dim)
    return LatentBank(
        rows, list(dataset.ids), list(dataset.labels), params.fingerprint(),
        {"n_points": str(n_points), "seed": str(seed)},
    )


def reconstruction_scores(params, dataset, n_points=None, seed=0, normalize=True):
    """Per-item Chamfer reconstruction loss (the reconstruction baseline score)."""
    out = {}
    for item_id, _, cloud in dataset:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), stable_key(item_id)]))
        out[item_id] = reconstruction_score(params, prepare_input(cloud, n_points, rng, normalize))
    return out


# ---------------------------------------------------------------------------
# checkpoint file


def _encode_arch(arch):
    parts = [struct.pack("<III", arch.latent_dim, arch.knn_k, arch.grid_side)]
    for widths in (arch.point_widths, arch.graph_widths, arch.head_widths, arch.fold_widths):
        parts.append(struct.pack("<H", len(widths)))
        parts.append(struct.pack(f"<{len(widths)}I", *widths))
    return b"".join(parts)


def encode_checkpoint(params):
    parts = [PAEC_MAGIC, struct.pack("<H", PAEC_VERSION), _encode_arch(params.arch)]
    layers = params.arch.layers()
    parts.append(struct.pack("<I", len(layers)))
    views = _views(params.arch, params.weights)
    for name, _, _, _ in layers:
        W, b = views[name]
        blob = W.ravel() if b is None else np.concatenate([W.ravel(), b])
        parts.append(pack_string(name))
        parts.append(struct.pack("<I", blob.size))
        parts.append(blob.astype("<f4").tobytes())
    lines = [f"{k}={v}".encode("utf-8") for k, v in params.training_meta.items()]
    parts.append(struct.pack("<I", len(lines)))
    for line in lines:
        parts.append(struct.pack("<I", len(line)) + line)
    return b"".join(parts)


def decode_checkpoint(data, source=None):
    r = BinaryReader(data, source)
    r.magic(PAEC_MAGIC, "PAEC")
    pos = r.pos
    version = r.u16("version")
    if version != PAEC_VERSION:
        raise FormatError(f"unsupported PAEC version {version}", source, pos)
    latent, k, side = r.unpack("<III", "architecture")
    widths = []
    for _ in range(4):
        n = r.u16("architecture")
        widths.append(r.unpack(f"<{n}I", "architecture"))
    try:
        arch = ArchSpec(latent, k, widths[0], widths[1], widths[2], side, widths[3])
    except ValueError as exc:
        raise FormatError(f"invalid architecture: {exc}", source, pos) from exc
    layers = arch.layers()
    pos = r.pos
    n_layers = r.u32("layer count")
    if n_layers != len(layers):
        raise FormatError(f"layer count {n_layers} does not match architecture ({len(layers)})", source, pos)
    blobs = []
    for name, fi, fo, has_bias in layers:
        pos = r.pos
        got = r.string("layer name")
        count = r.u32("layer size")
        expected = fi * fo + (fo if has_bias else 0)
        if got != name or count != expected:
            raise FormatError(
                f"layer {got!r} with {count} values does not match {name!r} ({expected})", source, pos
            )
        blobs.append(r.array("<f4", count, f"weights of {name}"))
    meta = {}
    for _ in range(r.u32("meta count")):
        n = r.u32("meta line")
        pos = r.pos
        line = bytes(r.take(n, "meta line")).decode("utf-8", errors="strict")
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"meta line without '=': {line!r}", source, pos)
        meta[key] = value
    r.finish()
    weights = np.concatenate(blobs).astype(np.float64)
    return AutoencoderParams(arch, weights, meta).frozen()


def save_checkpoint(path, params):
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes(), path)


def quantized(params):
    """Params rounded to float32, i.e. exactly what a checkpoint round trip yields."""
    return replace(params, weights=params.weights.astype(np.float32).astype(np.float64))
