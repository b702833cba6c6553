"""Prune-binarization of weight matrices.

Weights with ``|w| <= alpha + delta`` become ``alpha * sign(w)``; the rest
stay full precision.  A layer is stored as a sign BitMatrix scaled by alpha
plus a CSR residual holding ``A - alpha * sign(A)`` wherever A is not ±alpha,
and ``A @ B`` is computed as the binary product plus a sparse-dense product.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import load_tensor, store_tensor
from .kernels import gemm_1x1, gemm_1x2, gemm_1x32, spmm_csr
from .tensors import (DEFAULT_LANE_BITS, BitMatrix, CsrMatrix, ThmPlanes,
                      as_dense, pack_bits, pack_signs, unpack_signs)
from .transform import recompose_thm

DELTA_MIN = 1e-8  # the gradient formulas divide by delta


@dataclass(frozen=True)
class ApbParams:
    alpha: float
    delta: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.delta >= DELTA_MIN:
            raise ValueError(f"delta must be >= {DELTA_MIN}, got {self.delta}")

    @classmethod
    def clamped(cls, alpha: float, delta: float) -> "ApbParams":
        return cls(float(alpha), max(float(delta), DELTA_MIN))

    @property
    def threshold(self) -> float:
        return self.alpha + self.delta


def _sign(w: np.ndarray) -> np.ndarray:
    return np.where(w >= 0, 1.0, -1.0)


def _inside(w: np.ndarray, p: ApbParams) -> np.ndarray:
    # same predicate as (|w| - alpha) / delta <= 1, without the division
    return np.abs(w.astype(np.float64)) <= p.threshold


def apb_forward(w, p: ApbParams) -> np.ndarray:
    w = as_dense(w)
    alpha = np.float32(p.alpha)
    binarized = np.where(w >= 0, alpha, -alpha)
    return np.where(_inside(w, p), binarized, w).astype(np.float32)


def chi_b(w, p: ApbParams, lane_bits: int = DEFAULT_LANE_BITS) -> BitMatrix:
    """Indicator mask of the binarized weights."""
    return pack_bits(_inside(as_dense(w), p), lane_bits)


def ste_multiplier(w, p: ApbParams, surrogate_grad=None) -> np.ndarray:
    """d APB / d w under the straight-through estimator.

    Inside the interval the derivative of the surrogate is used (identity by
    default, so 1); outside APB is the identity.
    """
    w = as_dense(w)
    inner = np.ones_like(w, dtype=np.float64) if surrogate_grad is None else surrogate_grad(w)
    return np.where(_inside(w, p), inner, 1.0)


def ste_weight_grad(upstream, w, p: ApbParams, surrogate_grad=None) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64)
    return upstream * ste_multiplier(w, p, surrogate_grad)


def _grad_inputs(g_w, w):
    g = np.asarray(g_w, dtype=np.float64)
    w = as_dense(w).astype(np.float64)
    if g.shape != w.shape:
        raise ValueError(f"gradient shape {g.shape} != weight shape {w.shape}")
    return g, w


def grad_alpha(g_w, w, p: ApbParams) -> float:
    """``-(1/n) * sum(g * sign(w) * chi_B)``.

    Obtained from dL/dw_hat = delta * g * sign(w) and d w_hat / d alpha =
    -1/delta, keeping the 1/n averaging factor.
    """
    g, w = _grad_inputs(g_w, w)
    chi = _inside(w, p)
    return float(-np.sum(g * _sign(w) * chi) / w.size)


def grad_delta(g_w, w, p: ApbParams) -> float:
    """``(1/(delta n)) * sum(g * sign(w) * (alpha - |w|) * chi_B)``."""
    g, w = _grad_inputs(g_w, w)
    chi = _inside(w, p)
    terms = g * _sign(w) * (p.alpha - np.abs(w)) * chi
    return float(np.sum(terms) / (p.delta * w.size))


def init_alpha_delta(w) -> ApbParams:
    """alpha = mean |w|, delta = 3 * population std of w (clamped)."""
    w = as_dense(w).astype(np.float64)
    if w.size == 0:
        raise ValueError("cannot initialise from an empty weight matrix")
    alpha = float(np.mean(np.abs(w)))
    if alpha == 0:
        raise ValueError("all-zero weights give alpha = 0")
    return ApbParams.clamped(alpha, 3.0 * float(np.std(w)))


# ---------------------------------------------------------------------------
# Decomposition into binary + sparse parts
# ---------------------------------------------------------------------------

def _residual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """float32 ``a - b`` with ties rounded away from zero.

    Paired with the ties-toward-zero sum in ``_reconstruct`` this makes
    ``_reconstruct(b, _residual(a, b)) == a`` exact for same-signed a, b with
    |a| > |b|; plain round-half-even cannot guarantee that.
    """
    d = a.astype(np.float64) - b.astype(np.float64)
    r = d.astype(np.float32)
    away = np.nextafter(r, np.copysign(np.float32(np.inf), r))
    tie = ((np.abs(r.astype(np.float64)) < np.abs(d))
           & (np.abs(away.astype(np.float64) - d) == np.abs(d - r.astype(np.float64))))
    return np.where(tie, away, r)


def _reconstruct(b: np.ndarray, r: np.ndarray) -> np.ndarray:
    """float32 ``b + r`` with ties rounded toward zero."""
    s = b.astype(np.float64) + r.astype(np.float64)
    y = s.astype(np.float32)
    toward = np.nextafter(y, np.float32(0))
    tie = ((np.abs(y.astype(np.float64)) > np.abs(s))
           & (np.abs(y.astype(np.float64) - s) == np.abs(s - toward.astype(np.float64))))
    return np.where(tie, toward, y)


@dataclass(frozen=True, eq=False)
class ApbLayer:
    bin: BitMatrix          # signs of A, scaled by alpha
    residual: CsrMatrix     # A - alpha * sign(A) where A is not ±alpha
    alpha: float

    def __post_init__(self):
        if self.bin.shape != self.residual.shape:
            raise ValueError("binary part and residual differ in shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bin.shape

    @property
    def n_full(self) -> int:
        """Number of full-precision survivors."""
        return self.residual.nnz

    def binary_dense(self) -> np.ndarray:
        return unpack_signs(self.bin) * np.float32(self.alpha)

    def to_dense(self) -> np.ndarray:
        out = self.binary_dense()
        rp = self.residual.row_ptr
        r = np.repeat(np.arange(self.residual.rows), np.diff(rp))
        c = self.residual.col_idx
        out[r, c] = _reconstruct(out[r, c], self.residual.vals)
        return out


def decompose_apb(a, alpha: float, lane_bits: int = DEFAULT_LANE_BITS) -> ApbLayer:
    """Split an APB output into its scaled binary part and sparse residual."""
    a = as_dense(a)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    alpha32 = np.float32(alpha)
    binary = np.where(a >= 0, alpha32, -alpha32)
    full = a != binary  # Mask(A) == 0
    resid = np.zeros_like(a)
    resid[full] = _residual(a[full], binary[full])
    residual = CsrMatrix.from_dense(resid, keep=full)
    return ApbLayer(pack_signs(a, lane_bits), residual, float(alpha32))


def layer_forward(layer: ApbLayer, b, beta: float = 1.0, threads: int = 1) -> np.ndarray:
    """``A @ B`` as binary product plus sparse residual product.

    ``b`` may be a dense K x N array (binary part via 2 I+ - T), a
    column-packed sign BitMatrix with scale ``beta`` (1/1 kernel), or
    column-packed 2-bit planes (1/2 kernel).
    """
    if isinstance(b, BitMatrix):
        part_bin = gemm_1x1(layer.bin, b, layer.alpha, beta, threads=threads)
        dense_b = (unpack_signs(b) * np.float32(beta)).T
    elif isinstance(b, ThmPlanes):
        part_bin = gemm_1x2(layer.bin, b, gamma=layer.alpha, threads=threads)
        dense_b = (recompose_thm(b).values() * np.float32(b.gamma or 1.0)).T
    else:
        dense_b = as_dense(b)
        if dense_b.shape[0] != layer.shape[1]:
            raise ValueError(f"inner dimensions differ: {layer.shape} @ {dense_b.shape}")
        part_bin = gemm_1x32(layer.bin, dense_b, layer.alpha, threads=threads)
    part_full = spmm_csr(layer.residual, np.ascontiguousarray(dense_b), threads=threads)
    return (part_bin.astype(np.float64) + part_full).astype(np.float32)


def save_layer(prefix, layer: ApbLayer) -> None:
    """Write ``prefix.bin.btsr``, ``prefix.res.btsr`` and ``prefix.json``."""
    prefix = os.fspath(prefix)
    store_tensor(f"{prefix}.bin.btsr", layer.bin)
    store_tensor(f"{prefix}.res.btsr", layer.residual)
    Path(f"{prefix}.json").write_text(json.dumps({"alpha": layer.alpha}))


def load_layer(prefix) -> ApbLayer:
    prefix = os.fspath(prefix)
    meta = json.loads(Path(f"{prefix}.json").read_text())
    return ApbLayer(load_tensor(f"{prefix}.bin.btsr"), load_tensor(f"{prefix}.res.btsr"),
                    float(meta["alpha"]))


# ---------------------------------------------------------------------------
# Memory accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryFootprint:
    exact_bits: int
    approx_bits: int
    n: int

    @property
    def avg_bits_exact(self) -> float:
        return self.exact_bits / self.n

    @property
    def avg_bits_approx(self) -> float:
        return self.approx_bits / self.n


def memory_bits(n: int, s: int, b_v: int = 32, b_p: int = 0) -> MemoryFootprint:
    """Bits for n weights of which s stay full precision with b_v value bits
    and b_p position bits: exact ``(n - s) + s (b_v + b_p)``, approximate
    ``n + s (b_v + b_p)`` (binary matrix stored in full)."""
    if n <= 0 or s < 0 or b_v < 0 or b_p < 0:
        raise ValueError("counts and widths must be non-negative (n positive)")
    if s > n:
        raise ValueError(f"s={s} exceeds n={n}")
    per_full = b_v + b_p
    return MemoryFootprint((n - s) + s * per_full, n + s * per_full, n)


def position_bits(layer_dims) -> int:
    """Bits to address a full-precision entry: max of floor(log2(k - 1)) + 1."""
    dims = [int(k) for k in layer_dims]
    if not dims or min(dims) < 2:
        raise ValueError("every layer dimension must be >= 2")
    return max((k - 1).bit_length() for k in dims)


def layer_dimension(rows: int, cols: int) -> int:
    """Dimension used for position bits of a (possibly non-square) layer."""
    return max(rows, cols)


# ---------------------------------------------------------------------------
# Toy training hook
# ---------------------------------------------------------------------------

@dataclass
class ToyRun:
    weights: np.ndarray
    params: ApbParams
    history: list = field(default_factory=list)


def train_toy(x, y, w0, params: ApbParams | None = None, steps: int = 100,
              lr: float = 0.01, weight_decay: float = 0.0,
              freeze_at_half: bool = True) -> ToyRun:
    """Fit ``y ~ x @ APB(w)`` by plain gradient descent on latent weights.

    Latent weights get the STE gradient plus ``weight_decay * w``; alpha and
    delta follow ``grad_alpha`` / ``grad_delta`` and are frozen after half of
    the steps when ``freeze_at_half`` is set.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = as_dense(w0, copy=True).astype(np.float64)
    p = params or init_alpha_delta(w)
    run = ToyRun(w, p)
    for step in range(steps):
        q = apb_forward(w, p).astype(np.float64)
        err = x @ q - y
        g_q = x.T @ err / x.shape[0]
        g_w = ste_weight_grad(g_q, w, p)
        frozen = freeze_at_half and step >= steps // 2
        if not frozen:
            ga, gd = grad_alpha(g_q, w, p), grad_delta(g_q, w, p)
            p = ApbParams.clamped(max(p.alpha - lr * ga, DELTA_MIN), p.delta - lr * gd)
        w = w - lr * (g_w + weight_decay * w)
        run.history.append({
            "step": step,
            "loss": float(0.5 * np.mean(err ** 2)),
            "alpha": p.alpha,
            "delta": p.delta,
            "n_full": int(np.sum(~_inside(w.astype(np.float32), p))),
            "frozen": frozen,
        })
    run.weights = w.astype(np.float32)
    run.params = p
    return run
