"""Bitwise dot products and GEMM routines for 1/1, 1/2 and 2/2 bit widths.

Conventions
-----------
* The first operand is an M x K BitMatrix (or plane set) packed along K.
* The second operand is *column-packed*: an N x K BitMatrix (or plane set)
  whose row ``c`` holds column ``c`` of the K x N matrix.
* Every routine accumulates popcounts in integers (int64 lanes, int32
  results) and converts to float exactly once per output element.
  ``raw=True`` returns the integer result instead:

    1/1   C / (gamma_a * gamma_b)
    1/2   2 * C / (gamma * s)
    2/2   4 * C / (s_w * s_a)

Inside the kernels the second operand is re-laid word-major (word k of all N
columns contiguous) so the innermost loop runs across output columns and
vectorizes without a horizontal reduction per output.  The re-layout costs
O(N K / 64) and is part of every call.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._bitops import popcount
from .tensors import BitMatrix, CsrMatrix, ThmPlanes, as_dense, complement_mask, valid_word_mask

MAX_K = 1 << 20  # |accumulator| <= 36 K must fit int32


@dataclass(frozen=True)
class GemmProblem:
    M: int
    K: int
    N: int

    def __post_init__(self):
        if min(self.M, self.K, self.N) <= 0:
            raise ValueError(f"GEMM dims must be positive, got {self}")
        if self.K > MAX_K:
            raise ValueError(f"K={self.K} exceeds the accumulator bound {MAX_K}")

    @property
    def updates(self) -> int:
        return self.M * self.K * self.N


# ---------------------------------------------------------------------------
# Vector primitives (numpy; broadcast over leading axes, words on the last)
# ---------------------------------------------------------------------------

def _check_rows(n: int, *rows: np.ndarray) -> None:
    nwords = {r.shape[-1] for r in rows}
    if len(nwords) != 1:
        raise ValueError("bit rows have different word counts")
    if n < 0 or n > nwords.pop() * 64:
        raise ValueError(f"logical length {n} does not fit the bit rows")


def dot_binary(u, v, n: int):
    """±1 dot product ``n - 2 * popcount(u xor v)`` of packed rows."""
    u = np.asarray(u, dtype=np.uint64)
    v = np.asarray(v, dtype=np.uint64)
    _check_rows(n, u, v)
    diff = np.bitwise_count(u ^ v).sum(axis=-1, dtype=np.int64)
    return n - 2 * diff


def mbm(x, y, z, n: int):
    """Masked binary multiply: ±1 dot of ``x`` and ``y`` over the set bits of ``z``.

    ``popcount(z) - 2 * popcount((x xor y) and z)``; zero padding in ``z``
    makes padding self-masking.
    """
    x = np.asarray(x, dtype=np.uint64)
    y = np.asarray(y, dtype=np.uint64)
    z = np.asarray(z, dtype=np.uint64)
    _check_rows(n, x, y, z)
    active = np.bitwise_count(z).sum(axis=-1, dtype=np.int64)
    diff = np.bitwise_count((x ^ y) & z).sum(axis=-1, dtype=np.int64)
    return active - 2 * diff


def dot_1x32_reference(w, a, n: int, total: float | None = None) -> float:
    """Binary-by-real dot product as ``2 * I+ - T``.

    ``I+`` sums the activations where the weight bit is set and ``T`` is the
    sum of all activations (precomputed once per column when given).
    """
    w = np.asarray(w, dtype=np.uint64).ravel()
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size != n or n > w.size * 64:
        raise ValueError("length mismatch between weight bits and activations")
    bits = np.unpackbits(w.astype("<u8").view(np.uint8), bitorder="little")[:n].astype(bool)
    if total is None:
        total = float(a.sum())
    return 2.0 * float(a[bits].sum()) - total


# ---------------------------------------------------------------------------
# numba kernels; each fills out[r0:r1] so rows can be split across threads
# ---------------------------------------------------------------------------

@njit(nogil=True, cache=True)
def _kernel_1x1(a, bT, n, r0, r1, out):
    nw, ncols = bT.shape
    acc = np.empty(ncols, np.int64)
    for r in range(r0, r1):
        acc[:] = 0
        for k in range(nw):
            x = a[r, k]
            col = bT[k]
            for c in range(ncols):
                acc[c] += np.int64(popcount(x ^ col[c]))
        for c in range(ncols):
            out[r, c] = n - 2 * acc[c]


@njit(nogil=True, cache=True)
def _kernel_1x2(w, tT, hT, mT, init, active, r0, r1, out):
    nw, ncols = tT.shape
    # one accumulator carries both mbm terms with their 3:1 weights
    acc = np.empty(ncols, np.int64)
    for r in range(r0, r1):
        acc[:] = 0
        for k in range(nw):
            x = w[r, k]
            t = tT[k]
            h = hT[k]
            m = mT[k]
            for c in range(ncols):
                # padding of x and h is zero, so ~m never admits padding bits
                acc[c] += (3 * np.int64(popcount((x ^ t[c]) & m[c]))
                           + np.int64(popcount((x ^ h[c]) & ~m[c])))
        for c in range(ncols):
            out[r, c] = init[r] + active[c] - 2 * acc[c]


@njit(nogil=True, cache=True)
def _kernel_2x2(tw, hw, mw, tT, hT, mT, valid, init_row, init_col, const, r0, r1, out):
    nw, ncols = tT.shape
    # active-entry counts (p*) and masked mismatch counts (d*) of the four mbm terms
    p1 = np.empty(ncols, np.int64)
    d1 = np.empty(ncols, np.int64)
    p2 = np.empty(ncols, np.int64)
    d2 = np.empty(ncols, np.int64)
    p3 = np.empty(ncols, np.int64)
    d3 = np.empty(ncols, np.int64)
    p4 = np.empty(ncols, np.int64)
    d4 = np.empty(ncols, np.int64)
    for r in range(r0, r1):
        p1[:] = 0
        d1[:] = 0
        p2[:] = 0
        d2[:] = 0
        p3[:] = 0
        d3[:] = 0
        p4[:] = 0
        d4[:] = 0
        for k in range(nw):
            t1 = tw[r, k]
            h1 = hw[r, k]
            m1 = mw[r, k]
            m1bar = ~m1 & valid[k]
            t = tT[k]
            h = hT[k]
            m = mT[k]
            for c in range(ncols):
                m2 = m[c]
                z = m1 & m2
                p1[c] += np.int64(popcount(z))
                d1[c] += np.int64(popcount((t1 ^ t[c]) & z))
                z = m1 & ~m2
                p2[c] += np.int64(popcount(z))
                d2[c] += np.int64(popcount((t1 ^ h[c]) & z))
                z = m1bar & m2
                p3[c] += np.int64(popcount(z))
                d3[c] += np.int64(popcount((h1 ^ t[c]) & z))
                z = m1bar & ~m2
                p4[c] += np.int64(popcount(z))
                d4[c] += np.int64(popcount((h1 ^ h[c]) & z))
        for c in range(ncols):
            centred = (9 * (p1[c] - 2 * d1[c]) + 3 * (p2[c] - 2 * d2[c])
                       + 3 * (p3[c] - 2 * d3[c]) + (p4[c] - 2 * d4[c]))
            out[r, c] = centred + init_row[r] + init_col[c] + const


@njit(nogil=True, cache=True)
def _kernel_1x32(w, b, col_tot, r0, r1, out):
    nk, ncols = b.shape
    acc = np.empty(ncols, np.float64)
    for r in range(r0, r1):
        acc[:] = 0.0
        for k in range(nk):
            if (w[r, k >> 6] >> np.uint64(k & 63)) & np.uint64(1):
                bk = b[k]
                for c in range(ncols):
                    acc[c] += bk[c]
        for c in range(ncols):
            out[r, c] = 2.0 * acc[c] - col_tot[c]


@njit(nogil=True, cache=True)
def _kernel_dense(a, b, r0, r1, out):
    nk, ncols = b.shape
    acc = np.empty(ncols, np.float64)
    for i in range(r0, r1):
        acc[:] = 0.0
        for k in range(nk):
            aik = np.float64(a[i, k])
            bk = b[k]
            for j in range(ncols):
                acc[j] += aik * bk[j]
        for j in range(ncols):
            out[i, j] = acc[j]


@njit(nogil=True, cache=True)
def _kernel_spmm(row_ptr, col_idx, vals, b, r0, r1, out):
    ncols = b.shape[1]
    acc = np.empty(ncols, np.float64)
    for r in range(r0, r1):
        acc[:] = 0.0
        for j in range(row_ptr[r], row_ptr[r + 1]):
            v = np.float64(vals[j])
            bk = b[col_idx[j]]
            for c in range(ncols):
                acc[c] += v * bk[c]
        for c in range(ncols):
            out[r, c] = acc[c]


def _run_rows(kernel, rows: int, out: np.ndarray, args: tuple, threads: int) -> np.ndarray:
    """Run ``kernel(*args, r0, r1, out)`` over disjoint row blocks."""
    if threads <= 1 or rows < 2:
        kernel(*args, 0, rows, out)
        return out
    bounds = np.linspace(0, rows, min(threads, rows) + 1).astype(int)
    with ThreadPoolExecutor(max_workers=len(bounds) - 1) as pool:
        jobs = [pool.submit(kernel, *args, int(lo), int(hi), out)
                for lo, hi in zip(bounds[:-1], bounds[1:])]
        for job in jobs:
            job.result()
    return out


def _shared_words(*mats: BitMatrix) -> int:
    ks = {m.cols for m in mats}
    if len(ks) != 1:
        raise ValueError(f"shared dimension mismatch: {sorted(ks)}")
    k = ks.pop()
    if k > MAX_K:
        raise ValueError(f"K={k} exceeds the accumulator bound {MAX_K}")
    # beyond the shorter padding every word is zero on one side
    return min(m.words_per_row for m in mats)


def _word_major(m: BitMatrix, nw: int) -> np.ndarray:
    return np.ascontiguousarray(m.words[:, :nw].T)


def _row_major(m: BitMatrix, nw: int) -> np.ndarray:
    return np.ascontiguousarray(m.words[:, :nw])


def _finish(acc: np.ndarray, factor: float, raw: bool) -> np.ndarray:
    if raw:
        return acc
    return (acc.astype(np.float64) * factor).astype(np.float32)


# ---------------------------------------------------------------------------
# GEMM entry points
# ---------------------------------------------------------------------------

def gemm_ref_dense(a, b, threads: int = 1) -> np.ndarray:
    """Reference triple-loop product; each output sums over k in ascending order."""
    a = as_dense(a)
    b = as_dense(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float64)
    _run_rows(_kernel_dense, a.shape[0], out, (a, b), threads)
    return out.astype(np.float32)


def gemm_1x1(a: BitMatrix, b: BitMatrix, gamma_a: float = 1.0, gamma_b: float = 1.0,
             raw: bool = False, threads: int = 1) -> np.ndarray:
    """Binary x binary product; ``b`` is column-packed (N x K)."""
    nw = _shared_words(a, b)
    out = np.empty((a.rows, b.rows), dtype=np.int32)
    args = (_row_major(a, nw), _word_major(b, nw), np.int32(a.cols))
    _run_rows(_kernel_1x1, a.rows, out, args, threads)
    return _finish(out, gamma_a * gamma_b, raw)


def gemm_1x2(w: BitMatrix, a: ThmPlanes, gamma: float = 1.0,
             raw: bool = False, threads: int = 1) -> np.ndarray:
    """Binary weights (M x K) times 2-bit activations given as column-packed planes.

    Two mbm passes per output: t against m, and h against the complement of
    m.  The output starts from the per-row correction ``3 * sum(sign)``
    (``row_correction_1x2`` in value units) instead of zero.
    """
    nw = _shared_words(w, a.t, a.h, a.m)
    k = w.cols
    # popcount terms of the two mbm calls, 3 * |m| + |not m|, hoisted per column
    active = (3 * a.m.popcount_rows() + complement_mask(a.m).popcount_rows()).astype(np.int32)
    init = (3 * (2 * w.popcount_rows() - k)).astype(np.int32)
    out = np.empty((w.rows, a.rows), dtype=np.int32)
    args = (_row_major(w, nw), _word_major(a.t, nw), _word_major(a.h, nw),
            _word_major(a.m, nw), init, active)
    _run_rows(_kernel_1x2, w.rows, out, args, threads)
    factor = gamma * (a.gamma or 1.0) * a.scale / 2
    return _finish(out, factor, raw)


def _centred_sums2(p: ThmPlanes) -> np.ndarray:
    """Per-row sum of 2 * centred level, i.e. sum(2p - 3)."""
    t, h, m = p.t.popcount_rows(), p.h.popcount_rows(), p.m.popcount_rows()
    return 3 * (2 * t - m) + (2 * h - (p.cols - m))


def gemm_2x2(w: ThmPlanes, a: ThmPlanes, raw: bool = False, threads: int = 1) -> np.ndarray:
    """2-bit x 2-bit product from two plane sets (``a`` column-packed).

    Four mbm terms over the intersections of the masks, weighted 9:3:3:1 in
    units of (s_w s_a / 4), plus the row, column and constant corrections of
    the two centring shifts.
    """
    nw = _shared_words(w.t, w.h, w.m, a.t, a.h, a.m)
    k = w.cols
    init_row = (3 * _centred_sums2(w)).astype(np.int32)
    init_col = (3 * _centred_sums2(a)).astype(np.int32)
    valid = valid_word_mask(k, nw)
    out = np.empty((w.rows, a.rows), dtype=np.int32)
    args = (_row_major(w.t, nw), _row_major(w.h, nw), _row_major(w.m, nw),
            _word_major(a.t, nw), _word_major(a.h, nw), _word_major(a.m, nw),
            valid, init_row, init_col, np.int32(9 * k))
    _run_rows(_kernel_2x2, w.rows, out, args, threads)
    factor = (w.gamma or 1.0) * (a.gamma or 1.0) * w.scale * a.scale / 4
    return _finish(out, factor, raw)


def gemm_1x32(w: BitMatrix, b, alpha: float = 1.0, threads: int = 1) -> np.ndarray:
    """Binary weights times full-precision activations via ``2 * I+ - T``."""
    b = as_dense(b)
    if w.cols != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {w.shape} @ {b.shape}")
    col_tot = b.astype(np.float64).sum(axis=0)
    out = np.empty((w.rows, b.shape[1]), dtype=np.float64)
    _run_rows(_kernel_1x32, w.rows, out, (np.ascontiguousarray(w.words), b, col_tot), threads)
    return (out * alpha).astype(np.float32)


def spmm_csr(a: CsrMatrix, b, threads: int = 1) -> np.ndarray:
    """CSR x dense; each output row accumulates in stored column order."""
    b = as_dense(b)
    if a.cols != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.empty((a.rows, b.shape[1]), dtype=np.float64)
    _run_rows(_kernel_spmm, a.rows, out, (a.row_ptr, a.col_idx, a.vals, b), threads)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Theoretical peak performance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TppModel:
    """Inputs of ``tpp = clock * throughput * values-per-register``.

    The bitwise routines are modelled by their instruction mix: one update
    needs ``bitwise_ops_per_update`` instructions (xor, popcount, add) and
    ``bitwise_issue_width`` of them retire per cycle.
    """

    clock_ghz: float = 1.0
    fma_throughput: int = 2
    lane_bits: int = 512
    operand_bits: int = 32
    bitwise_issue_width: int = 2
    bitwise_ops_per_update: int = 3

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")


# cost of one update relative to the 1/1 routine
BITWISE_COST = {"1x1": 1, "1x2": 2, "2x2": 8}


@dataclass(frozen=True)
class TppEstimate:
    routine: str
    values_per_cycle: float
    updates_per_sec: float
    cost_ratio_vs_1x1: float


def tpp_model(m: TppModel, routine: str = "fp32") -> TppEstimate:
    """Peak updates for ``routine`` in {"fp32", "1x1", "1x2", "2x2"}."""
    binary_vpc = m.lane_bits * m.bitwise_issue_width / m.bitwise_ops_per_update
    if routine == "fp32":
        vpc = m.fma_throughput * m.lane_bits / m.operand_bits
    elif routine in BITWISE_COST:
        vpc = binary_vpc / BITWISE_COST[routine]
    else:
        raise ValueError(f"unknown routine {routine!r}")
    return TppEstimate(routine, vpc, vpc * m.clock_ghz * 1e9, binary_vpc / vpc)


def binary_speedup(m: TppModel) -> float:
    """Peak 1/1 throughput over peak fp32 throughput."""
    return tpp_model(m, "1x1").values_per_cycle / tpp_model(m, "fp32").values_per_cycle
