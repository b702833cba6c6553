"""The three bitwise GEMMs against the dense reference, and their relative cost."""
from __future__ import annotations

import numpy as np

from apbmm import (TwoBitMatrix, decompose_thm, gemm_1x1, gemm_1x2, gemm_2x2,
                   gemm_ref_dense, pack_signs)
from apbmm.bench import format_tpp, run_bench
from apbmm.kernels import GemmProblem

rng = np.random.default_rng(0)
M, K, N = 6, 300, 5

print("\nSecond operands are passed column-packed: an N x K matrix whose rows are")
print("the columns of the K x N operand.")
w = np.where(rng.random((M, K)) < 0.5, 1.0, -1.0).astype(np.float32)
a = np.where(rng.random((K, N)) < 0.5, 1.0, -1.0).astype(np.float32)
c = gemm_1x1(pack_signs(w), pack_signs(a.T), gamma_a=0.5, gamma_b=2.0)
print("1/1 matches dense:", np.array_equal(c, gemm_ref_dense(w, a)))

s = 0.25
levels = rng.integers(0, 4, (K, N)).astype(np.uint8)
planes = decompose_thm(TwoBitMatrix(levels.T, s))
c = gemm_1x2(pack_signs(w), planes)
print("1/2 matches dense:", np.allclose(c, gemm_ref_dense(w, levels * np.float32(s))))

wl = rng.integers(0, 4, (M, K)).astype(np.uint8)
c = gemm_2x2(decompose_thm(TwoBitMatrix(wl, 0.5)), planes)
ref = gemm_ref_dense(wl * np.float32(0.5), levels * np.float32(s))
print("2/2 matches dense:", np.allclose(c, ref))

print("\nThe integer accumulator is exact; raw=True exposes it:")
print(gemm_1x2(pack_signs(w), planes, raw=True)[:2])

print("\nPeak model at 2.5 GHz:")
print(format_tpp(2.5))

print("\nMeasured at 512^3 (median of 5):")
prob = GemmProblem(512, 512, 512)
base = None
for routine in ("1x1", "1x2", "2x2"):
    rec = run_bench(routine, prob, reps=5, warmup=1)
    base = base or rec.seconds
    print(f"  {routine}: {rec.seconds * 1e3:7.2f} ms  {rec.gops:7.1f} Gops  x{rec.seconds / base:.1f}")
