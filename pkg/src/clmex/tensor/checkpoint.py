"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"CLMXCKPT"
    8       4     uint32 format version (currently 1)
    12      8     uint64 header length L in bytes
    20      L     UTF-8 JSON header, keys sorted
    20+L    ...   payload: raw little-endian array bytes, back to back

The header holds ``"tensors"``, a list of ``{"name", "shape", "dtype",
"offset", "nbytes"}`` entries whose offsets are relative to the payload
start, and ``"meta"``, a free-form JSON object (model architecture,
optimizer scalars, RNG state, ...). Tensors are written in sorted-name
order so identical contents give identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"CLMXCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    pass


def _le_dtype(arr: np.ndarray) -> np.dtype:
    return arr.dtype.newbyteorder("<")


def dumps_checkpoint(tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype.kind not in "fiub":
            raise CheckpointError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_le_dtype(arr)).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": _le_dtype(arr).str,
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "tensors": entries, "meta": dict(meta or {})},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(blob[start : start + hlen].decode("utf-8"))
    payload = memoryview(blob)[start + hlen :]
    tensors = {}
    for e in header["tensors"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"tensor {e['name']!r} truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return tensors, header["meta"]


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_checkpoint(tensors, meta))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads_checkpoint(path.read_bytes())
