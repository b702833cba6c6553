"""Sign packing, binary dot products and the masked multiply."""
from __future__ import annotations

import numpy as np

from apbmm import decompose_thm, dot_binary, mbm, pack_signs, recompose_thm, TwoBitMatrix

spacer = "_" * 60

print("\nA sign matrix stores one bit per entry, little-endian inside 64-bit words.")
w = np.array([[0.3, -1.2, 0.0, 2.0, -0.1]], dtype=np.float32)
b = pack_signs(w)
print("w =", w[0])
print("packed word 0 =", bin(int(b.words[0, 0])), " (bit i is 1 where w[i] >= 0)")
print("words per row =", b.words_per_row, " (rows pad to 512 bits)")

print(spacer)
print("\nThe ±1 dot product only needs xor and popcount: n - 2 popcount(u xor v)")
u = pack_signs([[1, 1, -1, 1]]).words[0]
v = pack_signs([[1, -1, -1, -1]]).words[0]
print("[+1,+1,-1,+1] . [+1,-1,-1,-1] =", dot_binary(u, v, 4))

print("\nmbm restricts the product to the entries set in a mask z")
x = pack_signs([[1, -1, 1, -1]]).words[0]
y = pack_signs([[1, 1, -1, -1]]).words[0]
z = pack_signs([[1, -1, -1, 1]]).words[0]
print("x.y over entries {0, 3} =", mbm(x, y, z, 4))

print(spacer)
print("\nA 2-bit level p in 0..3 becomes three planes t, h, m after centring:")
q = TwoBitMatrix(np.array([[0, 1, 2, 3]]), scale=1.0)
p = decompose_thm(q)
for name in "thm":
    print(f"  {name} =", getattr(p, name).to_bool().astype(int)[0])
print("recomposed levels =", recompose_thm(p).levels[0])
