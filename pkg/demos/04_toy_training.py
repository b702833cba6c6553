"""Learning alpha and delta on a small least-squares problem."""
from __future__ import annotations

import numpy as np

from apbmm.apb import train_toy

spacer = "_" * 60
rng = np.random.default_rng(2)

print("\nTarget weights are mostly +-0.1 with a few large outliers, which is the")
print("shape a binary interval plus sparse residual is built for.")
x = rng.standard_normal((256, 32))
w_true = 0.1 * np.sign(rng.standard_normal((32, 8)))
outlier = rng.random(w_true.shape) < 0.05
w_true[outlier] = rng.normal(0.0, 1.0, outlier.sum())
y = x @ w_true
w0 = (w_true + 0.05 * rng.standard_normal(w_true.shape)).astype(np.float32)
print(f"{outlier.sum()} outliers among {w_true.size} weights")

run = train_toy(x, y, w0, steps=200, lr=0.002)
print("\nstep   loss     alpha   delta  full-precision")
for h in run.history[::25] + [run.history[-1]]:
    flag = "  (frozen)" if h["frozen"] else ""
    print(f"{h['step']:4d}  {h['loss']:.4f}  {h['alpha']:.4f}  {h['delta']:.4f}  {h['n_full']:4d}{flag}")

print(spacer)
print("\nWeight decay is applied to the weights but not to alpha or delta, so it")
print("pulls more of them inside the interval:")
for wd in (0.0, 0.3, 1.0, 3.0):
    last = train_toy(x, y, w0, steps=200, lr=0.002, weight_decay=wd).history[-1]
    print(f"  decay {wd:3.1f}: {last['n_full']:2d} full-precision weights, loss {last['loss']:.4f}")
