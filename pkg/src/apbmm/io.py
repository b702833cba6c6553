"""BTSR v1 tensor container.

Layout (little-endian, no alignment padding)::

    magic "BTSR" | version u32 = 1 | kind u8 | rows u64 | cols u64
    kind 0 (dense f32): f32[rows * cols]
    kind 1 (bit):       words_per_row u64, u64[rows * words_per_row]
    kind 2 (csr):       nnz u64, u64[rows + 1] row_ptr, u64[nnz] col_idx, f32[nnz] vals

Plane sets and APB layers are stored as several containers sharing a path
prefix plus a small JSON sidecar.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .tensors import BitMatrix, CsrMatrix, ThmPlanes, as_dense

MAGIC = b"BTSR"
VERSION = 1
KIND_DENSE, KIND_BIT, KIND_CSR = 0, 1, 2

_HEADER = struct.Struct("<4sIBQQ")
_U64 = struct.Struct("<Q")
# keeps rows * cols * 8 well inside int64 arithmetic
_MAX_ELEMS = 1 << 58


class TensorFormatError(ValueError):
    """Raised for malformed, truncated or unsupported BTSR data."""


def _write(path, header: bytes, *chunks) -> None:
    with open(path, "wb") as f:
        f.write(header)
        for chunk in chunks:
            f.write(chunk if isinstance(chunk, bytes) else np.ascontiguousarray(chunk).tobytes())


def store_tensor(path, m) -> None:
    """Write a dense array, BitMatrix or CsrMatrix to ``path``."""
    if isinstance(m, BitMatrix):
        header = _HEADER.pack(MAGIC, VERSION, KIND_BIT, m.rows, m.cols)
        _write(path, header, _U64.pack(m.words_per_row), m.words.astype("<u8"))
    elif isinstance(m, CsrMatrix):
        header = _HEADER.pack(MAGIC, VERSION, KIND_CSR, m.rows, m.cols)
        _write(path, header, _U64.pack(m.nnz), m.row_ptr.astype("<u8"),
               m.col_idx.astype("<u8"), m.vals.astype("<f4"))
    else:
        d = as_dense(m)
        header = _HEADER.pack(MAGIC, VERSION, KIND_DENSE, d.shape[0], d.shape[1])
        _write(path, header, d.astype("<f4"))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, nbytes: int) -> bytes:
        if nbytes < 0 or self.pos + nbytes > len(self.data):
            raise TensorFormatError("truncated BTSR payload")
        chunk = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        if count > _MAX_ELEMS:
            raise TensorFormatError("dimension overflow")
        size = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * size), dtype=dtype).copy()


def _check_dims(*dims: int) -> None:
    total = 1
    for d in dims:
        total *= d
        if total > _MAX_ELEMS:
            raise TensorFormatError("dimension overflow")


def load_tensor(path):
    """Read a tensor written by :func:`store_tensor`."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TensorFormatError("truncated BTSR header")
    magic, version, kind, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"unsupported BTSR version {version}")
    r = _Reader(data)
    r.pos = _HEADER.size
    _check_dims(rows, cols)

    if kind == KIND_DENSE:
        out = r.array("<f4", rows * cols).astype(np.float32).reshape(rows, cols)
    elif kind == KIND_BIT:
        wpr = r.u64()
        _check_dims(rows, wpr)
        words = r.array("<u8", rows * wpr).astype(np.uint64).reshape(rows, wpr)
        try:
            out = BitMatrix(words, cols)
        except ValueError as exc:
            raise TensorFormatError(str(exc)) from exc
    elif kind == KIND_CSR:
        nnz = r.u64()
        _check_dims(nnz)
        row_ptr = r.array("<u8", rows + 1)
        col_idx = r.array("<u8", nnz)
        vals = r.array("<f4", nnz)
        if (row_ptr.size and row_ptr.max(initial=0) > nnz) or (nnz and col_idx.max() >= cols):
            raise TensorFormatError("CSR indices out of range")
        try:
            out = CsrMatrix(rows, cols, row_ptr.astype(np.int64), col_idx.astype(np.int64), vals)
        except ValueError as exc:
            raise TensorFormatError(str(exc)) from exc
    else:
        raise TensorFormatError(f"unknown tensor kind {kind}")
    if r.pos != len(data):
        raise TensorFormatError("trailing bytes after BTSR payload")
    return out


def _sidecar(prefix) -> Path:
    return Path(os.fspath(prefix) + ".json")


def store_planes(prefix, p: ThmPlanes) -> None:
    """Store ``prefix.t.btsr``, ``prefix.h.btsr``, ``prefix.m.btsr`` and ``prefix.json``."""
    prefix = os.fspath(prefix)
    for name in "thm":
        store_tensor(f"{prefix}.{name}.btsr", getattr(p, name))
    _sidecar(prefix).write_text(json.dumps({"s": p.scale, "gamma": p.gamma}))


def load_planes(prefix) -> ThmPlanes:
    prefix = os.fspath(prefix)
    meta = json.loads(_sidecar(prefix).read_text())
    planes = [load_tensor(f"{prefix}.{name}.btsr") for name in "thm"]
    if not all(isinstance(p, BitMatrix) for p in planes):
        raise TensorFormatError("plane files must hold bit tensors")
    return ThmPlanes(*planes, scale=float(meta["s"]), gamma=meta.get("gamma"))
