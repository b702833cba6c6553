"""Packed and dense tensor types.

Dense matrices are plain 2-D ``float32`` numpy arrays.  Bit matrices store one
bit per element in little-endian 64-bit words; each row is padded with zero
bits up to a multiple of the SIMD lane width so kernels can run whole-lane
loops.  Bit ``b`` at logical index ``i`` of a sign matrix encodes ``2b - 1``;
for masks the bit is the literal mask value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_LANE_BITS = 512
WORD_BITS = 64


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def as_dense(m, copy: bool = False) -> np.ndarray:
    """Validate and return ``m`` as a finite 2-D float32 array."""
    arr = np.array(m, dtype=np.float32, copy=copy or None)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"dense matrix must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("dense matrix contains NaN or Inf")
    return arr


def words_for(cols: int, lane_bits: int = DEFAULT_LANE_BITS) -> int:
    """Number of 64-bit words per row holding ``cols`` bits, padded to whole lanes."""
    if lane_bits <= 0 or lane_bits % WORD_BITS:
        raise ValueError(f"lane width must be a positive multiple of 64, got {lane_bits}")
    lanes = max(1, -(-cols // lane_bits))
    return lanes * (lane_bits // WORD_BITS)


def valid_word_mask(cols: int, words_per_row: int) -> np.ndarray:
    """Per-word mask with ones exactly at the logical bit positions ``< cols``."""
    mask = np.zeros(words_per_row, dtype=np.uint64)
    full, rem = divmod(cols, WORD_BITS)
    mask[:full] = np.uint64(0xFFFF_FFFF_FFFF_FFFF)
    if rem:
        mask[full] = np.uint64((1 << rem) - 1)
    return mask


@dataclass(frozen=True, eq=False)
class BitMatrix:
    """Row-major bit matrix; ``words`` has shape ``(rows, words_per_row)``."""

    words: np.ndarray
    cols: int

    def __post_init__(self):
        words = np.asarray(self.words)
        if words.ndim != 2 or words.dtype != np.uint64:
            raise ValueError("BitMatrix words must be a 2-D uint64 array")
        if self.cols < 0 or words.shape[1] * WORD_BITS < self.cols:
            raise ValueError(
                f"{words.shape[1]} words per row cannot hold {self.cols} columns")
        pad = words & ~valid_word_mask(self.cols, words.shape[1])
        if pad.any():
            raise ValueError("BitMatrix padding bits must be zero")
        object.__setattr__(self, "words", _frozen(words))

    @property
    def rows(self) -> int:
        return self.words.shape[0]

    @property
    def words_per_row(self) -> int:
        return self.words.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def to_bool(self) -> np.ndarray:
        """Logical bits as a ``(rows, cols)`` bool array."""
        as_bytes = self.words.astype("<u8", copy=False).view(np.uint8)
        bits = np.unpackbits(as_bytes.reshape(self.rows, -1), axis=1, bitorder="little")
        return bits[:, : self.cols].astype(bool)

    def popcount_rows(self) -> np.ndarray:
        return np.bitwise_count(self.words).sum(axis=1, dtype=np.int64)

    def with_lane_bits(self, lane_bits: int) -> "BitMatrix":
        """Same logical bits, re-padded to another lane width."""
        wpr = words_for(self.cols, lane_bits)
        out = np.zeros((self.rows, wpr), dtype=np.uint64)
        n = min(wpr, self.words_per_row)
        out[:, :n] = self.words[:, :n]
        return BitMatrix(out, self.cols)


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse rows with float32 values."""

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=np.float32)
        if row_ptr.shape != (self.rows + 1,):
            raise ValueError("row_ptr must have rows + 1 entries")
        nnz = col_idx.size
        if row_ptr[0] != 0 or row_ptr[-1] != nnz or vals.size != nnz:
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if nnz:
            if col_idx.min() < 0 or col_idx.max() >= self.cols:
                raise ValueError("column index out of range")
            # strictly increasing inside each row; row starts are exempt
            step = np.diff(col_idx)
            starts = np.zeros(nnz, dtype=bool)
            starts[row_ptr[1:-1][row_ptr[1:-1] < nnz]] = True
            if np.any((step <= 0) & ~starts[1:]):
                raise ValueError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(vals)):
            raise ValueError("CSR values must be finite")
        object.__setattr__(self, "row_ptr", _frozen(row_ptr))
        object.__setattr__(self, "col_idx", _frozen(col_idx))
        object.__setattr__(self, "vals", _frozen(vals))

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_dense(cls, m, keep=None) -> "CsrMatrix":
        """Build from a dense array; ``keep`` selects stored entries (default: nonzeros)."""
        m = as_dense(m)
        keep = m != 0 if keep is None else np.asarray(keep, dtype=bool)
        r, c = np.nonzero(keep)
        row_ptr = np.zeros(m.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=m.shape[0]), out=row_ptr[1:])
        return cls(m.shape[0], m.shape[1], row_ptr, c, m[r, c])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=np.float32)
        r = np.repeat(np.arange(self.rows), np.diff(self.row_ptr))
        out[r, self.col_idx] = self.vals
        return out


@dataclass(frozen=True, eq=False)
class ThmPlanes:
    """The three bit planes {t, h, m} of a zero-centred 2-bit matrix.

    ``t`` flags the +3/2 level, ``h`` the +1/2 level and ``m`` marks the
    ±3/2 pair.  ``scale`` is the quantization step; ``gamma`` an optional
    extra multiplier carried by weight planes.
    """

    t: BitMatrix
    h: BitMatrix
    m: BitMatrix
    scale: float
    gamma: float | None = None

    def __post_init__(self):
        if not (self.t.shape == self.h.shape == self.m.shape):
            raise ValueError("t, h and m planes must share one shape")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.t.shape

    @property
    def rows(self) -> int:
        return self.t.rows

    @property
    def cols(self) -> int:
        return self.t.cols


def pack_bits(bits, lane_bits: int = DEFAULT_LANE_BITS) -> BitMatrix:
    """Pack a 2-D boolean array (literal bits) into a BitMatrix."""
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim == 1:
        bits = bits.reshape(1, -1)
    rows, cols = bits.shape
    wpr = words_for(cols, lane_bits)
    padded = np.zeros((rows, wpr * WORD_BITS), dtype=bool)
    padded[:, :cols] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    words = packed.view("<u8").astype(np.uint64, copy=False)
    return BitMatrix(words.reshape(rows, wpr), cols)


def pack_signs(m, lane_bits: int = DEFAULT_LANE_BITS) -> BitMatrix:
    """Sign-encode a dense matrix: bit set iff entry >= 0 (sign(0) = +1)."""
    return pack_bits(as_dense(m) >= 0, lane_bits)


def unpack_signs(b: BitMatrix) -> np.ndarray:
    """Decode a sign BitMatrix to a ±1 float32 matrix."""
    return np.where(b.to_bool(), np.float32(1.0), np.float32(-1.0))


def complement_mask(m: BitMatrix) -> BitMatrix:
    """Flip the logical bits of a mask; padding stays zero."""
    valid = valid_word_mask(m.cols, m.words_per_row)
    return BitMatrix(~m.words & valid, m.cols)


def and_masks(a: BitMatrix, b: BitMatrix) -> BitMatrix:
    if a.shape != b.shape or a.words_per_row != b.words_per_row:
        raise ValueError("mask shapes differ")
    return BitMatrix(a.words & b.words, a.cols)
