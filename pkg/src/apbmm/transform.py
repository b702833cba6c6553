"""Uniform 2-bit quantization and the {t, h, m} bit-plane codec.

A 2-bit level ``p`` in {0, 1, 2, 3} represents ``p * s``.  Subtracting the
mean ``3s/2`` gives the zero-centred levels s * {-3/2, -1/2, +1/2, +3/2},
which map to three bit planes:

    centred   -3/2  -1/2  +1/2  +3/2
    t            0     0     0     1
    h            0     0     1     0
    m            1     0     0     1
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import (DEFAULT_LANE_BITS, BitMatrix, ThmPlanes, as_dense,
                      pack_bits)

LEVELS = 4
CENTER = 1.5  # mean level, in units of the step


class InvalidEncodingError(ValueError):
    """Bit planes that do not correspond to any 2-bit level."""


@dataclass(frozen=True, eq=False)
class TwoBitMatrix:
    levels: np.ndarray  # uint8, values 0..3
    scale: float

    def __post_init__(self):
        levels = np.asarray(self.levels)
        if levels.ndim != 2:
            raise ValueError("levels must be 2-D")
        if levels.size and (levels.min() < 0 or levels.max() >= LEVELS):
            raise ValueError("levels must lie in {0, 1, 2, 3}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        levels = np.ascontiguousarray(levels, dtype=np.uint8)
        levels.flags.writeable = False
        object.__setattr__(self, "levels", levels)

    @property
    def shape(self):
        return self.levels.shape

    @property
    def T(self) -> "TwoBitMatrix":
        return TwoBitMatrix(self.levels.T, self.scale)

    def values(self) -> np.ndarray:
        """Represented values ``p * s`` as float32."""
        return (self.levels.astype(np.float64) * self.scale).astype(np.float32)


def quantize_uniform_2bit(m, s: float) -> TwoBitMatrix:
    """Round ``m / s`` half away from zero and clamp to [0, 3]."""
    if not s > 0:
        raise ValueError(f"quantization step must be positive, got {s}")
    x = as_dense(m).astype(np.float64) / s
    rounded = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return TwoBitMatrix(np.clip(rounded, 0, LEVELS - 1).astype(np.uint8), s)


def zero_center(q: TwoBitMatrix) -> tuple[np.ndarray, float]:
    """Centred values ``(p - 3/2) * s`` and the removed mean ``3s/2``."""
    centred = (q.levels.astype(np.float64) - CENTER) * q.scale
    return centred, CENTER * q.scale


def decompose_thm(q: TwoBitMatrix, gamma: float | None = None,
                  lane_bits: int = DEFAULT_LANE_BITS) -> ThmPlanes:
    """Split a 2-bit matrix into its t/h/m planes, packing along rows.

    GEMM routines take their second operand column-packed, so activations of
    shape K x N are decomposed as ``decompose_thm(q.T)``.
    """
    p = q.levels
    t = pack_bits(p == 3, lane_bits)
    h = pack_bits(p == 2, lane_bits)
    m = pack_bits((p == 0) | (p == 3), lane_bits)
    return ThmPlanes(t, h, m, scale=q.scale, gamma=gamma)


def check_planes(p: ThmPlanes) -> None:
    """Raise InvalidEncodingError unless every element is a table column."""
    t, h, m = p.t.words, p.h.words, p.m.words
    if np.any(t & h):
        raise InvalidEncodingError("t and h are both set")
    if np.any(t & ~m):
        raise InvalidEncodingError("t set while m is clear")
    if np.any(h & m):
        raise InvalidEncodingError("h set while m is set")


def recompose_thm(p: ThmPlanes) -> TwoBitMatrix:
    check_planes(p)
    t, h, m = p.t.to_bool(), p.h.to_bool(), p.m.to_bool()
    levels = np.where(m, np.where(t, 3, 0), np.where(h, 2, 1)).astype(np.uint8)
    return TwoBitMatrix(levels, p.scale)


def row_correction_1x2(w_bits: BitMatrix, gamma: float, mu: float) -> np.ndarray:
    """Per-row ``gamma * mu * sum(sign)`` used to initialise the 1/2 output."""
    sign_sum = 2 * w_bits.popcount_rows() - w_bits.cols
    return gamma * mu * sign_sum.astype(np.float64)


@dataclass(frozen=True)
class Corrections2x2:
    row_sums: np.ndarray   # mu_a * sum_k centred_w[r, k]
    col_sums: np.ndarray   # mu_w * sum_k centred_a[k, c]
    const_term: float      # K * mu_w * mu_a

    def broadcast(self) -> np.ndarray:
        return self.row_sums[:, None] + self.col_sums[None, :] + self.const_term


def _centred_sums(p: ThmPlanes) -> np.ndarray:
    """Row sums of the centred levels, in units of s/2 (exact integers)."""
    # centred*2 is +3 (t), -3 (m & ~t), +1 (h), -1 (otherwise)
    t = p.t.popcount_rows()
    h = p.h.popcount_rows()
    m = p.m.popcount_rows()
    n_m, n_not_m = m, p.cols - m
    return 3 * (t - (n_m - t)) + (h - (n_not_m - h))


def corrections_2x2(w: ThmPlanes, a: ThmPlanes) -> Corrections2x2:
    """Offline terms that turn the centred 2/2 product into the uncentred one.

    ``w`` is M x K, ``a`` is column-packed (N x K).  With ``mu = 3s/2``::

        w.a = sum(wc * ac) + mu_a * sum(wc) + mu_w * sum(ac) + K * mu_w * mu_a
    """
    if w.cols != a.cols:
        raise ValueError(f"shared dimension mismatch: {w.cols} != {a.cols}")
    mu_w, mu_a = CENTER * w.scale, CENTER * a.scale
    row = mu_a * (w.scale / 2) * _centred_sums(w).astype(np.float64)
    col = mu_w * (a.scale / 2) * _centred_sums(a).astype(np.float64)
    return Corrections2x2(row, col, w.cols * mu_w * mu_a)
