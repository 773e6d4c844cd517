"""Point-cloud files, dataset manifests and latent banks.

Binary formats are little-endian throughout. Floats are stored as float32 and
computed with as float64.

PCB   ``b"PCB1" | u32 count | count*3 f32``
LTB1  ``b"LTB1" | u32 dim | u32 count | str fingerprint | count*(str id, str label) | count*dim f32``
      where ``str`` is ``u16 byte length | UTF-8``.
"""

import csv
import hashlib
import io
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import as_cloud

PCB_MAGIC = b"PCB1"
LTB_MAGIC = b"LTB1"
MANIFEST_HEADER = ["path", "class", "split"]


class FormatError(ValueError):
    """Malformed input file. ``offset`` is the byte (or line) position of the fault."""

    def __init__(self, message, source=None, offset=None):
        where = []
        if source is not None:
            where.append(str(source))
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.source = source
        self.offset = offset


class FingerprintWarning(UserWarning):
    pass


class BinaryReader:
    """Cursor over a bytes buffer that raises positioned ``FormatError``s."""

    def __init__(self, data, source=None):
        self.data = memoryview(data)
        self.pos = 0
        self.source = source

    def take(self, n, what="data"):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated {what}: need {n} bytes, {len(self.data) - self.pos} left",
                self.source, self.pos,
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what="header"):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def u8(self, what="header"):
        return self.unpack("<B", what)[0]

    def u16(self, what="header"):
        return self.unpack("<H", what)[0]

    def u32(self, what="header"):
        return self.unpack("<I", what)[0]

    def f64(self, what="header"):
        return self.unpack("<d", what)[0]

    def string(self, what="string"):
        n = self.u16(what)
        start = self.pos
        raw = bytes(self.take(n, what))
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {what}", self.source, start) from exc

    def array(self, dtype, count, what="payload"):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt).copy()

    def magic(self, expected, kind):
        got = bytes(self.take(len(expected), "magic"))
        if got != expected:
            raise FormatError(f"not a {kind} file (magic {got!r})", self.source, 0)

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.pos} unexpected trailing bytes", self.source, self.pos
            )


def pack_string(s):
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for u16 length prefix")
    return struct.pack("<H", len(raw)) + raw


# ---------------------------------------------------------------------------
# point clouds


def read_xyz(path):
    """Parse one whitespace-separated ``x y z`` triple per line.

    Blank lines and lines starting with ``#`` are skipped.
    """
    pts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.split()
            if len(tokens) != 3:
                raise FormatError(f"line {lineno}: expected 3 values, got {len(tokens)}", path)
            try:
                pts.append([float(t) for t in tokens])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: non-numeric token", path) from exc
    if not pts:
        raise FormatError("no points", path)
    return as_cloud(pts, name=str(path))


def write_xyz(path, cloud):
    np.savetxt(path, as_cloud(cloud), fmt="%.17g")


def encode_pcb(cloud):
    cloud = as_cloud(cloud)
    return PCB_MAGIC + struct.pack("<I", len(cloud)) + cloud.astype("<f4").tobytes()


def decode_pcb(data, source=None):
    r = BinaryReader(data, source)
    r.magic(PCB_MAGIC, "PCB")
    count = r.u32("point count")
    if count == 0:
        raise FormatError("zero points", source, 4)
    pts = r.array("<f4", 3 * count, "point payload").reshape(count, 3)
    r.finish()
    return pts.astype(np.float64)


def write_pcb(path, cloud):
    Path(path).write_bytes(encode_pcb(cloud))


def read_pcb(path):
    return decode_pcb(Path(path).read_bytes(), path)


def read_cloud(path):
    """Read a ``.pcb`` or ``.xyz`` file by extension."""
    path = Path(path)
    if path.suffix.lower() == ".pcb":
        return read_pcb(path)
    return read_xyz(path)


# ---------------------------------------------------------------------------
# datasets


def stable_key(text):
    """64-bit integer derived from ``text``; used to key per-item random streams."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


class CloudDataset:
    """Labeled point clouds, either held in memory or loaded lazily from files."""

    def __init__(self, ids, labels, clouds=None, paths=None, splits=None):
        self.ids = list(ids)
        self.labels = [str(lab) for lab in labels]
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("item ids must be unique")
        if len(self.labels) != len(self.ids):
            raise ValueError("ids and labels differ in length")
        if (clouds is None) == (paths is None):
            raise ValueError("give exactly one of clouds or paths")
        self._clouds = None if clouds is None else [as_cloud(c) for c in clouds]
        self._paths = None if paths is None else [Path(p) for p in paths]
        self.splits = list(splits) if splits is not None else [""] * len(self.ids)

    @classmethod
    def from_fractal(cls, fractal_dataset, prefix="fractal"):
        ids, counters = [], {}
        for label in fractal_dataset.labels:
            k = counters.get(label, 0)
            counters[label] = k + 1
            ids.append(f"{prefix}/{label:04d}/{k:04d}")
        return cls(ids, fractal_dataset.labels, clouds=fractal_dataset.clouds)

    def __len__(self):
        return len(self.ids)

    def cloud(self, i):
        if self._clouds is not None:
            return self._clouds[i]
        return read_cloud(self._paths[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self.ids[i], self.labels[i], self.cloud(i)

    @property
    def classes(self):
        return sorted(set(self.labels))

    def class_counts(self):
        counts = {}
        for lab in self.labels:
            counts[lab] = counts.get(lab, 0) + 1
        return dict(sorted(counts.items()))


def read_manifest(path, base_dir=None):
    """Load a ``path,class,split`` manifest into a lazily resolved dataset."""
    path = Path(path)
    base = Path(base_dir) if base_dir is not None else path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise FormatError(f"missing header {','.join(MANIFEST_HEADER)!r}", path)
    ids, labels, paths, splits = [], [], [], []
    seen = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) not in (2, 3):
            raise FormatError(f"line {lineno}: expected 2 or 3 fields, got {len(row)}", path)
        rel, label = row[0].strip(), row[1].strip()
        split = row[2].strip() if len(row) == 3 else ""
        if not label:
            raise FormatError(f"line {lineno}: empty class label", path)
        if rel in seen:
            raise FormatError(f"line {lineno}: duplicate path {rel!r} (first on line {seen[rel]})", path)
        seen[rel] = lineno
        full = base / rel
        if not full.is_file():
            raise FileNotFoundError(f"{path}: line {lineno}: missing file {full}")
        ids.append(rel)
        labels.append(label)
        paths.append(full)
        splits.append(split)
    if not ids:
        raise FormatError("manifest lists no files", path)
    return CloudDataset(ids, labels, paths=paths, splits=splits)


def write_manifest(path, records):
    """Write ``(relative_path, label[, split])`` records with the required header."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for rec in records:
        rel, label = rec[0], rec[1]
        split = rec[2] if len(rec) > 2 else ""
        w.writerow([rel, label, split])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# latent banks


@dataclass
class LatentBank:
    """Latent vectors with per-row item id and class label.

    ``rows`` is float64 but holds float32-representable values, so a bank
    survives a save/load round trip bit-exactly.
    """

    rows: np.ndarray
    ids: list
    labels: list
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32).astype(np.float64)
        if self.rows.ndim != 2:
            raise ValueError("latent rows must be a 2D array")
        self.ids = list(self.ids)
        self.labels = [str(lab) for lab in self.labels]
        if not (len(self.ids) == len(self.labels) == len(self.rows)):
            raise ValueError("rows, ids and labels differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("latent bank ids must be unique")
        if not np.isfinite(self.rows).all():
            raise ValueError("latent bank contains non-finite values")

    @property
    def dim(self):
        return self.rows.shape[1]

    def __len__(self):
        return len(self.ids)

    @property
    def classes(self):
        return sorted(set(self.labels))

    def class_counts(self):
        counts = {}
        for lab in self.labels:
            counts[lab] = counts.get(lab, 0) + 1
        return dict(sorted(counts.items()))

    def subset(self, indices):
        indices = list(indices)
        return LatentBank(
            self.rows[indices], [self.ids[i] for i in indices],
            [self.labels[i] for i in indices], self.fingerprint, dict(self.meta),
        )


def encode_latent_bank(bank):
    parts = [LTB_MAGIC, struct.pack("<II", bank.dim, len(bank)), pack_string(bank.fingerprint)]
    for item_id, label in zip(bank.ids, bank.labels):
        parts.append(pack_string(item_id))
        parts.append(pack_string(label))
    parts.append(bank.rows.astype("<f4").tobytes())
    return b"".join(parts)


def decode_latent_bank(data, source=None):
    r = BinaryReader(data, source)
    r.magic(LTB_MAGIC, "LTB1")
    dim = r.u32("dim")
    count = r.u32("count")
    fingerprint = r.string("fingerprint")
    ids, labels = [], []
    for _ in range(count):
        ids.append(r.string("item id"))
        labels.append(r.string("class label"))
    rows = r.array("<f4", dim * count, "latent rows").reshape(count, dim)
    r.finish()
    return LatentBank(rows.astype(np.float64), ids, labels, fingerprint)


def save_latent_bank(path, bank):
    Path(path).write_bytes(encode_latent_bank(bank))


def load_latent_bank(path):
    return decode_latent_bank(Path(path).read_bytes(), path)


def check_fingerprint(bank, expected):
    """Warn (and return False) when ``bank`` came from a different extractor."""
    if bank.fingerprint != expected:
        warnings.warn(
            f"latent bank fingerprint {bank.fingerprint!r} does not match extractor {expected!r}",
            FingerprintWarning, stacklevel=2,
        )
        return False
    return True
