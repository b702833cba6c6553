"""Benchmark records, cross-oracle verification and APB statistics.

Every routine is timed on the same logical work of M*K*N updates, so bitwise
and dense numbers share one axis (gflops counts two flops per update).
"""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .apb import (ApbParams, apb_forward, decompose_apb, init_alpha_delta,
                  layer_dimension, memory_bits, position_bits)
from .kernels import (BITWISE_COST, GemmProblem, TppModel, binary_speedup,
                      dot_binary, gemm_1x1, gemm_1x2, gemm_1x32, gemm_2x2,
                      gemm_ref_dense, mbm, spmm_csr, tpp_model)
from .tensors import CsrMatrix, as_dense, pack_bits, pack_signs
from .transform import TwoBitMatrix, check_planes, decompose_thm, recompose_thm

ROUTINES = ("ref_dense", "1x1", "1x2", "2x2", "spmm", "1x32_ref")
CSV_COLUMNS = ("routine", "M", "K", "N", "reps", "warmup", "threads", "seconds",
               "updates", "gops", "gflops", "tpp_gops", "pct_tpp", "tpp_flag")
SPMM_DENSITY = 0.1


def im2col_shape(c_in: int, c_out: int, kh: int, kw: int, h: int, w: int,
                 stride: int = 1, pad: int = 0) -> GemmProblem:
    """GEMM shape of a convolution lowered with im2col."""
    if min(c_in, c_out, kh, kw, h, w) <= 0 or stride < 1 or pad < 0:
        raise ValueError("dimensions must be positive, stride >= 1, pad >= 0")
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"kernel {kh}x{kw} does not fit a padded {h}x{w} input")
    return GemmProblem(c_out, c_in * kh * kw, h_out * w_out)


# ResNet-18 convolutions on a 224x224 input: (c_in, c_out, k, hw_in, stride, pad)
RESNET18_CONVS = (
    (3, 64, 7, 224, 2, 3),
    (64, 64, 3, 56, 1, 1),
    (64, 128, 3, 56, 2, 1),
    (128, 128, 3, 28, 1, 1),
    (128, 256, 3, 28, 2, 1),
    (256, 256, 3, 14, 1, 1),
    (256, 512, 3, 14, 2, 1),
    (512, 512, 3, 7, 1, 1),
)


def resnet18_shapes() -> list[GemmProblem]:
    return [im2col_shape(ci, co, k, k, hw, hw, s, p) for ci, co, k, hw, s, p in RESNET18_CONVS]


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRecord:
    routine: str
    M: int
    K: int
    N: int
    seconds: float
    reps: int
    warmup: int = 0
    threads: int = 1
    tpp_gops: float | None = None  # peak for this routine at the given clock and threads

    def __post_init__(self):
        if self.routine not in ROUTINES:
            raise ValueError(f"unknown routine {self.routine!r}")
        if not self.seconds > 0:
            raise ValueError("seconds must be positive")

    @property
    def updates(self) -> int:
        return self.M * self.K * self.N

    @property
    def gops(self) -> float:
        return self.updates / self.seconds / 1e9

    @property
    def gflops(self) -> float:
        return 2 * self.gops

    @property
    def pct_tpp(self) -> float | None:
        if self.tpp_gops is None:
            return None
        return 100.0 * self.gops / self.tpp_gops

    @property
    def tpp_flag(self) -> str:
        pct = self.pct_tpp
        return "above_peak" if pct is not None and pct > 100 else ""

    def as_row(self) -> dict:
        pct = self.pct_tpp
        return {
            "routine": self.routine, "M": self.M, "K": self.K, "N": self.N,
            "reps": self.reps, "warmup": self.warmup, "threads": self.threads,
            "seconds": f"{self.seconds:.6e}", "updates": self.updates,
            "gops": f"{self.gops:.4f}", "gflops": f"{self.gflops:.4f}",
            "tpp_gops": "" if self.tpp_gops is None else f"{self.tpp_gops:.4f}",
            "pct_tpp": "" if pct is None else f"{pct:.2f}",
            "tpp_flag": self.tpp_flag,
        }


def write_csv(records, f) -> None:
    writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(r.as_row())


def routine_tpp_gops(routine: str, clock_ghz: float | None, threads: int = 1) -> float | None:
    """Peak updates/s / 1e9 used as the %-of-tpp denominator.

    Bitwise routines use their own peak; the float routines use fp32.
    """
    if clock_ghz is None:
        return None
    model = TppModel(clock_ghz=clock_ghz)
    key = routine if routine in BITWISE_COST else "fp32"
    return tpp_model(model, key).updates_per_sec * threads / 1e9


def _levels(rng, shape) -> TwoBitMatrix:
    return TwoBitMatrix(rng.integers(0, 4, size=shape, dtype=np.uint8), 1.0)


def make_workload(routine: str, prob: GemmProblem, rng, threads: int = 1):
    """Random operands for ``routine`` and a zero-argument callable running it."""
    M, K, N = prob.M, prob.K, prob.N
    if routine == "ref_dense":
        a = rng.standard_normal((M, K), dtype=np.float32)
        b = rng.standard_normal((K, N), dtype=np.float32)
        return lambda: gemm_ref_dense(a, b, threads=threads)
    if routine == "1x1":
        a = pack_signs(rng.standard_normal((M, K)))
        b = pack_signs(rng.standard_normal((N, K)))
        return lambda: gemm_1x1(a, b, raw=True, threads=threads)
    if routine == "1x2":
        w = pack_signs(rng.standard_normal((M, K)))
        a = decompose_thm(_levels(rng, (N, K)))
        return lambda: gemm_1x2(w, a, raw=True, threads=threads)
    if routine == "2x2":
        w = decompose_thm(_levels(rng, (M, K)))
        a = decompose_thm(_levels(rng, (N, K)))
        return lambda: gemm_2x2(w, a, raw=True, threads=threads)
    if routine == "spmm":
        dense = rng.standard_normal((M, K), dtype=np.float32)
        a = CsrMatrix.from_dense(dense, keep=rng.random((M, K)) < SPMM_DENSITY)
        b = rng.standard_normal((K, N), dtype=np.float32)
        return lambda: spmm_csr(a, b, threads=threads)
    if routine == "1x32_ref":
        w = pack_signs(rng.standard_normal((M, K)))
        b = rng.standard_normal((K, N), dtype=np.float32)
        return lambda: gemm_1x32(w, b, threads=threads)
    raise ValueError(f"unknown routine {routine!r}")


def time_callable(fn, reps: int = 9, warmup: int = 2) -> float:
    """Median wall time of ``reps`` calls after ``warmup`` discarded calls."""
    if reps < 1 or warmup < 0:
        raise ValueError("reps must be >= 1 and warmup >= 0")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run_bench(routine: str, prob: GemmProblem, reps: int = 9, warmup: int = 2,
              threads: int = 1, clock_ghz: float | None = None, seed: int = 0) -> BenchRecord:
    fn = make_workload(routine, prob, np.random.default_rng(seed), threads)
    fn()  # compile outside the timed region
    secs = time_callable(fn, reps, warmup)
    # sub-resolution timings would make gops infinite
    secs = max(secs, 1e-9)
    return BenchRecord(routine, prob.M, prob.K, prob.N, secs, reps, warmup, threads,
                       routine_tpp_gops(routine, clock_ghz, threads))


def parse_square(text: str) -> list[int]:
    """``LO..HI`` doubles from LO; ``LO..HI:STEP`` steps arithmetically."""
    try:
        span, _, step = text.partition(":")
        lo, hi = (int(x) for x in span.split(".."))
        step = int(step) if step else None
    except ValueError:
        raise ValueError(f"bad sweep {text!r}, expected LO..HI[:STEP]") from None
    if lo < 1 or hi < lo or (step is not None and step < 1):
        raise ValueError(f"bad sweep {text!r}")
    if step is not None:
        return list(range(lo, hi + 1, step))
    sizes = []
    while lo <= hi:
        sizes.append(lo)
        lo *= 2
    return sizes


# ---------------------------------------------------------------------------
# tpp table
# ---------------------------------------------------------------------------

def tpp_table(clock_ghz: float = 1.0) -> list[dict]:
    model = TppModel(clock_ghz=clock_ghz)
    fp32 = tpp_model(model, "fp32")
    rows = []
    for name in ("fp32", "1x1", "1x2", "2x2"):
        est = tpp_model(model, name)
        rows.append({
            "routine": name,
            "values_per_cycle": est.values_per_cycle,
            "gops": est.updates_per_sec / 1e9,
            "cost_vs_1x1": est.cost_ratio_vs_1x1 if name != "fp32" else None,
            "speedup_vs_fp32": est.values_per_cycle / fp32.values_per_cycle,
        })
    return rows


def format_tpp(clock_ghz: float = 1.0) -> str:
    lines = [f"clock {clock_ghz:g} GHz",
             f"{'routine':<8}{'values/cycle':>14}{'Gops':>12}{'cost':>8}{'vs fp32':>10}"]
    for r in tpp_table(clock_ghz):
        cost = "-" if r["cost_vs_1x1"] is None else f"{r['cost_vs_1x1']:g}"
        lines.append(f"{r['routine']:<8}{r['values_per_cycle']:>14.2f}{r['gops']:>12.2f}"
                     f"{cost:>8}{r['speedup_vs_fp32']:>10.2f}")
    s = binary_speedup(TppModel(clock_ghz=clock_ghz))
    lines.append(f"binary vs fp32 speedup: {s:.2f}x (~{round(s * 2) / 2:g}x)")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    first_failure: str | None = None

    def fail(self, msg: str) -> None:
        self.failures += 1
        if self.first_failure is None:
            self.first_failure = msg


@dataclass
class VerifyReport:
    seed: int
    suites: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.failures == 0 for s in self.suites)

    def text(self) -> str:
        lines = [f"verify seed={self.seed}"]
        for s in self.suites:
            status = "ok" if s.failures == 0 else f"FAILED ({s.failures})"
            lines.append(f"  {s.name:<16} {s.cases:>7} cases  {status}")
            if s.first_failure:
                lines.append(f"    first failure: {s.first_failure}")
        lines.append("all suites passed" if self.passed else "verification FAILED")
        return "\n".join(lines)


def _all_bit_rows(n: int) -> np.ndarray:
    idx = np.arange(1 << n)[:, None]
    return ((idx >> np.arange(n)) & 1).astype(bool)


def _suite_dot(max_n: int, rng, n_random: int) -> SuiteResult:
    res = SuiteResult("dot_binary")
    for n in range(1, max_n + 1):
        rows = _all_bit_rows(n)
        u = pack_bits(rows).words
        pm = np.where(rows, 1, -1)
        got = dot_binary(u[:, None, :], u[None, :, :], n)
        want = pm @ pm.T
        res.cases += got.size
        bad = np.argwhere(got != want)
        if bad.size:
            i, j = bad[0]
            res.fail(f"n={n} u={i:#x} v={j:#x}: got {got[i, j]} expected {want[i, j]}")
    for _ in range(n_random):
        n = int(rng.integers(1, 4097))
        bits = rng.random((2, n)) < 0.5
        pm = np.where(bits, 1, -1)
        w = pack_bits(bits).words
        res.cases += 1
        got, want = int(dot_binary(w[0], w[1], n)), int(pm[0] @ pm[1])
        if got != want:
            res.fail(f"n={n}: got {got} expected {want}")
    return res


def mbm_oracle(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Sum of (±1 from x) * (±1 from y) over entries where z is set."""
    return np.sum(np.where(x == y, 1, -1) * z, axis=-1)


def _suite_mbm(max_n: int, rng, n_random: int) -> SuiteResult:
    res = SuiteResult("mbm")
    for n in range(1, max_n + 1):
        rows = _all_bit_rows(n)
        w = pack_bits(rows).words
        got = mbm(w[:, None, None, :], w[None, :, None, :], w[None, None, :, :], n)
        want = mbm_oracle(rows[:, None, None, :], rows[None, :, None, :], rows[None, None, :, :])
        res.cases += got.size
        bad = np.argwhere(got != want)
        if bad.size:
            i, j, k = bad[0]
            res.fail(f"n={n} x={i:#x} y={j:#x} z={k:#x}: got {got[i, j, k]} expected {want[i, j, k]}")
    for _ in range(n_random):
        n = int(rng.integers(1, 4097))
        bits = rng.random((3, n)) < 0.5
        w = pack_bits(bits).words
        res.cases += 1
        got, want = int(mbm(w[0], w[1], w[2], n)), int(mbm_oracle(*bits))
        if got != want:
            res.fail(f"n={n}: got {got} expected {want}")
    return res


def all_level_strings(length: int = 6) -> np.ndarray:
    idx = np.arange(4 ** length)[:, None]
    return ((idx >> (2 * np.arange(length))) & 3).astype(np.uint8)


def _suite_thm() -> SuiteResult:
    res = SuiteResult("thm_codec")
    levels = all_level_strings(6)
    planes = decompose_thm(TwoBitMatrix(levels, 1.0))
    check_planes(planes)
    back = recompose_thm(planes).levels
    res.cases = levels.shape[0]
    bad = np.flatnonzero(np.any(back != levels, axis=1))
    for i in bad[:1]:
        res.fail(f"levels {levels[i].tolist()} -> {back[i].tolist()}")
    res.failures = int(bad.size)
    return res


def _gemm_case(routine: str, prob: GemmProblem, rng):
    """(raw kernel output, exact integer oracle) for one random problem."""
    M, K, N = prob.M, prob.K, prob.N
    if routine == "1x1":
        sa, sb = rng.random((M, K)) < 0.5, rng.random((N, K)) < 0.5
        got = gemm_1x1(pack_bits(sa), pack_bits(sb), raw=True)
        want = gemm_ref_dense(np.where(sa, 1, -1), np.where(sb, 1, -1).T)
    elif routine == "1x2":
        sw, la = rng.random((M, K)) < 0.5, rng.integers(0, 4, (N, K), dtype=np.uint8)
        got = gemm_1x2(pack_bits(sw), decompose_thm(TwoBitMatrix(la, 1.0)), raw=True)
        want = 2 * gemm_ref_dense(np.where(sw, 1, -1), la.T)
    elif routine == "2x2":
        lw = rng.integers(0, 4, (M, K), dtype=np.uint8)
        la = rng.integers(0, 4, (N, K), dtype=np.uint8)
        got = gemm_2x2(decompose_thm(TwoBitMatrix(lw, 1.0)),
                       decompose_thm(TwoBitMatrix(la, 1.0)), raw=True)
        want = 4 * gemm_ref_dense(lw, la.T)
    else:
        raise ValueError(f"no integer oracle for {routine!r}")
    return np.array(got, dtype=np.int64), want.astype(np.int64)


def _suite_gemm(routine: str, rng, n_cases: int, max_dim: int,
                inject_fault: str | None) -> SuiteResult:
    res = SuiteResult(f"gemm_{routine}")
    for case in range(n_cases):
        prob = GemmProblem(*(int(d) for d in rng.integers(1, max_dim + 1, 3)))
        got, want = _gemm_case(routine, prob, rng)
        if inject_fault == routine and case == 0:
            r, c = (int(rng.integers(0, d)) for d in got.shape)
            got[r, c] ^= 1
        res.cases += 1
        bad = np.argwhere(got != want)
        if bad.size:
            r, c = bad[0]
            res.fail(f"{routine} (M,K,N)=({prob.M},{prob.K},{prob.N}) at (r,c)=({r},{c}): "
                     f"got {got[r, c]} expected {want[r, c]}")
    return res


def _suite_apb(rng, n_cases: int) -> SuiteResult:
    res = SuiteResult("apb_decompose")
    for _ in range(n_cases):
        rows, cols = (int(d) for d in rng.integers(1, 65, 2))
        w = rng.standard_normal((rows, cols), dtype=np.float32) * np.float32(rng.uniform(0.01, 5))
        scale = float(np.mean(np.abs(w))) or 1.0
        p = ApbParams.clamped(rng.uniform(0.05, 2) * scale, rng.uniform(0, 1) * scale)
        a = apb_forward(w, p)
        back = decompose_apb(a, p.alpha).to_dense()
        res.cases += 1
        bad = np.argwhere(back.view(np.uint32) != a.view(np.uint32))
        if bad.size:
            r, c = bad[0]
            res.fail(f"({rows}x{cols}) at ({r},{c}): {back[r, c]!r} != {a[r, c]!r}")
    return res


GEMM_ROUTINES = ("1x1", "1x2", "2x2")


def run_verify(seed: int = 0, exhaustive_n: int = 8, mbm_exhaustive_n: int = 5,
               random_cases: int = 500, gemm_cases: int = 40, max_dim: int = 96,
               inject_fault: str | None = None) -> VerifyReport:
    """Exhaustive small-n and randomized cross-oracle checks.

    ``inject_fault`` names a GEMM routine whose first output gets one bit
    flipped, to exercise the failure report.
    """
    if inject_fault is not None and inject_fault not in GEMM_ROUTINES:
        raise ValueError(f"fault injection supports {GEMM_ROUTINES}, got {inject_fault!r}")
    rng = np.random.default_rng(seed)
    report = VerifyReport(seed)
    report.suites.append(_suite_dot(exhaustive_n, rng, random_cases))
    report.suites.append(_suite_mbm(mbm_exhaustive_n, rng, random_cases))
    report.suites.append(_suite_thm())
    for routine in GEMM_ROUTINES:
        report.suites.append(_suite_gemm(routine, rng, gemm_cases, max_dim, inject_fault))
    report.suites.append(_suite_apb(rng, 20))
    return report


# ---------------------------------------------------------------------------
# APB statistics
# ---------------------------------------------------------------------------

def apb_stats(w, alpha: float | None = None, delta: float | None = None,
              b_v: int = 32, dims=None) -> dict:
    """Compression statistics of one weight matrix under APB.

    Missing alpha/delta come from ``init_alpha_delta``; ``dims`` lists the
    layer dimensions used for position bits (default: this layer's larger
    dimension).
    """
    w = as_dense(w)
    init = init_alpha_delta(w) if alpha is None or delta is None else None
    p = ApbParams.clamped(init.alpha if alpha is None else alpha,
                          init.delta if delta is None else delta)
    layer = decompose_apb(apb_forward(w, p), p.alpha)
    n, s = w.size, layer.n_full
    if dims is None:
        dims = [layer_dimension(*w.shape)]
    b_p = position_bits(dims)
    mem = memory_bits(n, s, b_v, b_p)
    return {
        "rows": w.shape[0], "cols": w.shape[1],
        "alpha": p.alpha, "delta": p.delta,
        "n": n, "s": s, "binarized": n - s,
        "residual_density": s / n,
        "b_v": b_v, "b_p": b_p,
        "memory_bits_exact": mem.exact_bits,
        "memory_bits_approx": mem.approx_bits,
        "avg_bits_exact": mem.avg_bits_exact,
        "avg_bits_approx": mem.avg_bits_approx,
    }

