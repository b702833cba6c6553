"""Hardware popcount for numba kernels.

``llvm.ctpop`` lowers to ``popcnt`` on scalars and to ``vpopcntq`` when the
loop vectorizes on AVX-512 VPOPCNTDQ hardware.
"""
from numba import types
from numba.extending import intrinsic


@intrinsic
def popcount(typingctx, x):
    if not isinstance(x, types.Integer):
        return None

    def codegen(context, builder, sig, args):
        return builder.ctpop(args[0])

    return x(x), codegen
