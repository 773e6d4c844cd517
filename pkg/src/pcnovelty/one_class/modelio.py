"""OCM1 model files.

Layout (little-endian)::

    b"OCM1" | u8 kind | u8 kernel kind | f64 kernel parameter | u16 n_arrays
    n_arrays * (str name | u8 ndim | ndim * u32 shape | f64 payload)
    u32 CRC-32 of every preceding byte
"""

import struct
import zlib
from pathlib import Path

import numpy as np

from ..dataset_io import BinaryReader, FormatError, pack_string
from ._kernel import KernelSpec
from .deepsvdd import DeepSvddModel
from .gods import GodsModel
from .kpcand import KpcaNdModel
from .ocsvm import OcSvmModel

OCM_MAGIC = b"OCM1"
MODEL_TAGS = {"ocsvm": 1, "kpcand": 2, "deepsvdd": 3, "gods": 4}
MODEL_TYPES = {"ocsvm": OcSvmModel, "kpcand": KpcaNdModel, "deepsvdd": DeepSvddModel, "gods": GodsModel}
KERNEL_TAGS = {None: 0, "rbf": 1, "gaussian": 2, "linear": 3}


def encode_model(model):
    kernel = getattr(model, "kernel", None)
    parts = [
        OCM_MAGIC,
        struct.pack("<BBd", MODEL_TAGS[model.kind], KERNEL_TAGS[kernel.kind if kernel else None],
                    kernel.param if kernel else 0.0),
    ]
    arrays = model.to_arrays()
    parts.append(struct.pack("<H", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        parts.append(pack_string(name))
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_model(data, source=None):
    data = bytes(data)
    r = BinaryReader(data, source)
    r.magic(OCM_MAGIC, "OCM1")
    kind_tag, kernel_tag, kernel_param = r.unpack("<BBd", "header")
    kinds = {v: k for k, v in MODEL_TAGS.items()}
    if kind_tag not in kinds:
        raise FormatError(f"unknown model kind tag {kind_tag}", source, 4)
    kernel_kinds = {v: k for k, v in KERNEL_TAGS.items()}
    if kernel_tag not in kernel_kinds:
        raise FormatError(f"unknown kernel tag {kernel_tag}", source, 5)
    arrays = {}
    for _ in range(r.u16("array count")):
        name = r.string("array name")
        ndim = r.u8("array rank")
        shape = r.unpack(f"<{ndim}I", "array shape")
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = r.array("<f8", count, f"array {name!r}").reshape(shape).astype(np.float64)
    body_end = r.pos
    (crc,) = r.unpack("<I", "checksum")
    r.finish()
    if zlib.crc32(data[:body_end]) != crc:
        raise FormatError("checksum mismatch", source, body_end)
    kernel = None
    if kernel_kinds[kernel_tag] is not None:
        kernel = KernelSpec(kernel_kinds[kernel_tag], kernel_param)
    kind = kinds[kind_tag]
    try:
        return MODEL_TYPES[kind].from_arrays(arrays, kernel)
    except KeyError as exc:
        raise FormatError(f"{kind} model is missing array {exc}", source) from exc


def save_model(path, model):
    Path(path).write_bytes(encode_model(model))


def load_model(path):
    return decode_model(Path(path).read_bytes(), path)
