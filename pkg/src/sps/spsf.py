"""SPSF tensor container: the on-disk format for feature maps and checkpoints.

Record layout (all integers little-endian):

    magic   4 bytes  "SPSF"
    version u16      (currently 1)
    kind    u8       feature kind code, 0 for generic tensors
    dtype   u8       0 = float32 little-endian (the only defined code)
    ndim    u8
    dims    ndim * u32
    payload row-major float32
    meta    u32 length prefix + UTF-8 JSON

A feature file is a single record. A checkpoint is a stream of records:
record 0 is an empty tensor whose metadata is the checkpoint header (it
lists tensor names in order), followed by one named record per tensor.
Round-trips are byte-exact because the JSON is canonicalized.
"""

from __future__ import annotations

import io
import json
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"SPSF"
VERSION = 1
DTYPE_F32 = 0

KIND_CODES = {"tensor": 0, "log_mel": 1, "cqt": 2, "gamma": 3, "mfcc": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class SpsfError(ValueError):
    """Malformed SPSF data."""


def _canonical_json(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_record(fh: BinaryIO, array: np.ndarray, kind: str = "tensor",
                 meta: dict | None = None) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if kind not in KIND_CODES:
        raise ValueError(f"unknown kind {kind!r}")
    fh.write(MAGIC)
    fh.write(struct.pack("<HBBB", VERSION, KIND_CODES[kind], DTYPE_F32, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())
    blob = _canonical_json(meta or {})
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def read_record(fh: BinaryIO) -> tuple[np.ndarray, str, dict]:
    """Read one record; returns (array, kind name, metadata dict)."""
    magic = fh.read(4)
    if magic != MAGIC:
        raise SpsfError(f"bad magic {magic!r}")
    head = fh.read(5)
    if len(head) < 5:
        raise SpsfError("truncated record header")
    version, kind_code, dtype, ndim = struct.unpack("<HBBB", head)
    if version != VERSION:
        raise SpsfError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise SpsfError(f"unsupported dtype code {dtype}")
    if kind_code not in KIND_NAMES:
        raise SpsfError(f"unknown kind code {kind_code}")
    dim_bytes = fh.read(4 * ndim)
    if len(dim_bytes) < 4 * ndim:
        raise SpsfError("truncated dims")
    dims = struct.unpack(f"<{ndim}I", dim_bytes) if ndim else ()
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = fh.read(4 * count)
    if len(payload) < 4 * count:
        raise SpsfError(f"truncated payload: want {4 * count} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    len_bytes = fh.read(4)
    if len(len_bytes) < 4:
        raise SpsfError("missing metadata length")
    (blob_len,) = struct.unpack("<I", len_bytes)
    blob = fh.read(blob_len)
    if len(blob) < blob_len:
        raise SpsfError("truncated metadata blob")
    meta = json.loads(blob.decode("utf-8")) if blob_len else {}
    return arr.copy(), KIND_NAMES[kind_code], meta


def save_array(path, array: np.ndarray, kind: str = "tensor", meta: dict | None = None) -> None:
    buf = io.BytesIO()
    write_record(buf, array, kind, meta)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_array(path) -> tuple[np.ndarray, str, dict]:
    with open(path, "rb") as fh:
        return read_record(fh)


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict) -> None:
    """Write named tensors plus a header record (order preserved)."""
    head = dict(header)
    head["tensor_names"] = list(tensors.keys())
    buf = io.BytesIO()
    write_record(buf, np.zeros(0, dtype=np.float32), "tensor", head)
    for name, arr in tensors.items():
        write_record(buf, arr, "tensor", {"name": name})
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        _, _, header = read_record(fh)
        names = header.pop("tensor_names", None)
        if names is None:
            raise SpsfError("checkpoint header missing tensor_names")
        tensors: dict[str, np.ndarray] = {}
        for expected in names:
            arr, _, meta = read_record(fh)
            name = meta.get("name")
            if name != expected:
                raise SpsfError(f"tensor order mismatch: expected {expected!r}, got {name!r}")
            tensors[name] = arr
    return tensors, header
