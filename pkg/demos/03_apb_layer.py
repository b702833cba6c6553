"""Prune-binarizing a weight matrix and multiplying with the split layer."""
from __future__ import annotations

import numpy as np

from apbmm import (apb_forward, decompose_apb, gemm_ref_dense, init_alpha_delta,
                   layer_forward)
from apbmm.bench import apb_stats

rng = np.random.default_rng(1)
w = rng.standard_normal((128, 576)).astype(np.float32) * 0.05

p = init_alpha_delta(w)
print(f"\nalpha = mean|w| = {p.alpha:.4f}, delta = 3 std(w) = {p.delta:.4f}")
a = apb_forward(w, p)
print("distinct binarized values:", np.unique(a[np.abs(w) <= p.alpha + p.delta]))

layer = decompose_apb(a, p.alpha)
print(f"full-precision survivors: {layer.n_full} of {w.size}")
print("reconstruction bit-exact:", layer.to_dense().tobytes() == a.tobytes())

b = rng.standard_normal((576, 64)).astype(np.float32)
ref = gemm_ref_dense(a, b)
out = layer_forward(layer, b)
print(f"binary + sparse product, relative error {np.linalg.norm(out - ref) / np.linalg.norm(ref):.1e}")

print("\nCompression statistics (b_p from the larger layer dimension):")
for k, v in apb_stats(w).items():
    print(f"  {k:>20}: {v}")

print("\nNarrowing the interval keeps more weights in full precision:")
for frac in (1.0, 0.5, 0.25):
    st = apb_stats(w, p.alpha, p.delta * frac)
    print(f"  delta x {frac:<4}: s = {st['s']:6d}, {st['avg_bits_exact']:.2f} bits/weight")
