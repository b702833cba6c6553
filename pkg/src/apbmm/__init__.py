"""Bit-packed matrix multiplication for binary and 2-bit operands, with
prune-binarized (APB) weight layers."""
from __future__ import annotations

from .apb import (DELTA_MIN, ApbLayer, ApbParams, apb_forward, chi_b,
                  decompose_apb, grad_alpha, grad_delta, init_alpha_delta,
                  layer_forward, load_layer, memory_bits, position_bits,
                  save_layer, ste_weight_grad, train_toy)
from .io import TensorFormatError, load_planes, load_tensor, store_planes, store_tensor
from .kernels import (GemmProblem, TppModel, binary_speedup, dot_1x32_reference,
                      dot_binary, gemm_1x1, gemm_1x2, gemm_1x32, gemm_2x2,
                      gemm_ref_dense, mbm, spmm_csr, tpp_model)
from .tensors import BitMatrix, CsrMatrix, ThmPlanes, pack_bits, pack_signs, unpack_signs
from .transform import (Corrections2x2, InvalidEncodingError, TwoBitMatrix,
                        corrections_2x2, decompose_thm, quantize_uniform_2bit,
                        recompose_thm, zero_center)

__version__ = "0.1.0"
