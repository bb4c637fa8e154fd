"""Weight checkpoints: named arrays with shape headers and a format version.

Two encodings share one logical layout:

* binary (any suffix but ``.json``): ``b"GCKPT\\x00"``, then little-endian
  ``u32 version``, ``u32 meta_len`` + UTF-8 JSON metadata, ``u32 count``, and
  per tensor ``u16 name_len``, name, ``u8 dtype`` (0 = f8, 1 = f4),
  ``u8 ndim``, ``ndim x u32`` extents, raw values in row-major order.
* JSON (``.json`` suffix): ``{"format", "version", "meta", "tensors": {name:
  {"dtype", "shape", "values"}}}``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GCKPT\x00"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    meta = meta or {}
    if path.suffix == ".json":
        doc = {"format": "gustcast-checkpoint", "version": FORMAT_VERSION, "meta": meta,
               "tensors": {k: {"dtype": str(np.asarray(v).dtype), "shape": list(np.shape(v)),
                               "values": np.asarray(v).ravel().tolist()} for k, v in tensors.items()}}
        path.write_text(json.dumps(doc))
        return
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        if arr.dtype not in _CODES:
            raise CheckpointFormatError(f"{name}: unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<BB{arr.ndim}I", code, arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    path.write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, meta)``."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("format") != "gustcast-checkpoint":
            raise CheckpointFormatError("not a checkpoint document")
        if doc.get("version") != FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {doc.get('version')}")
        tensors = {k: np.asarray(v["values"], dtype=v["dtype"]).reshape(v["shape"])
                   for k, v in doc["tensors"].items()}
        return tensors, doc.get("meta", {})

    buf = path.read_bytes()
    if not buf.startswith(MAGIC):
        raise CheckpointFormatError("bad magic bytes")
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", buf, pos)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    pos += 8
    meta = json.loads(buf[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        n = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
        pos += n * dtype.itemsize
    if pos != len(buf):
        raise CheckpointFormatError("trailing bytes after last tensor")
    return tensors, meta
