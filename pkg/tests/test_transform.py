from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apbmm.tensors import BitMatrix, ThmPlanes, pack_bits, pack_signs
from apbmm.transform import (InvalidEncodingError, TwoBitMatrix, check_planes,
                             corrections_2x2, decompose_thm, quantize_uniform_2bit,
                             recompose_thm, row_correction_1x2, zero_center)

# centred value -> (t, h, m), one column per level
TABLE = {-1.5: (0, 0, 1), -0.5: (0, 0, 0), 0.5: (0, 1, 0), 1.5: (1, 0, 1)}


def planes_bits(p: ThmPlanes):
    return p.t.to_bool(), p.h.to_bool(), p.m.to_bool()


def test_quantize_examples():
    q = quantize_uniform_2bit([[0.0, 0.9, 2.2, 7.0]], 1.0)
    np.testing.assert_array_equal(q.levels, [[0, 1, 2, 3]])
    np.testing.assert_array_equal(quantize_uniform_2bit(np.zeros((2, 3)), 0.5).levels, 0)
    for s in (0.1, 1.0, 3.7):
        lattice = np.array([[0, s, 2 * s, 3 * s]], dtype=np.float32)
        np.testing.assert_array_equal(quantize_uniform_2bit(lattice, s).levels, [[0, 1, 2, 3]])


def test_quantize_half_away_from_zero_and_clamp():
    q = quantize_uniform_2bit([[0.5, 1.5, 2.5, -0.5, -3.0, 3.49]], 1.0)
    np.testing.assert_array_equal(q.levels, [[1, 2, 3, 0, 0, 3]])


def test_quantize_rejects_bad_step():
    for s in (0.0, -1.0):
        with pytest.raises(ValueError):
            quantize_uniform_2bit([[1.0]], s)


def test_two_bit_matrix_validation():
    with pytest.raises(ValueError):
        TwoBitMatrix(np.array([[4]]), 1.0)
    with pytest.raises(ValueError):
        TwoBitMatrix(np.array([[1]]), 0.0)


def test_zero_center_examples():
    c, mu = zero_center(TwoBitMatrix(np.array([[0, 1, 2, 3]]), 1.0))
    np.testing.assert_array_equal(c, [[-1.5, -0.5, 0.5, 1.5]])
    assert mu == 1.5
    c, _ = zero_center(TwoBitMatrix(np.array([[3]]), 2.0))
    assert c[0, 0] == 3.0
    c, mu = zero_center(TwoBitMatrix(np.array([[0, 3]]), 0.8))
    assert c[0, 0] == -c[0, 1] == -1.5 * 0.8


@given(st.integers(0, 3), st.integers(0, 3), st.floats(0.01, 100))
def test_zero_center_affine(p, q, s):
    c, _ = zero_center(TwoBitMatrix(np.array([[p, q]]), s))
    assert c[0, 0] - c[0, 1] == pytest.approx((p - q) * s)


def test_decompose_matches_table():
    p = decompose_thm(TwoBitMatrix(np.array([[0, 1, 2, 3]]), 1.0))
    t, h, m = planes_bits(p)
    for idx, centred in enumerate((-1.5, -0.5, 0.5, 1.5)):
        assert (t[0, idx], h[0, idx], m[0, idx]) == TABLE[centred]
    assert int(p.t.words[0, 0]) == 0b1000
    assert int(p.h.words[0, 0]) == 0b0100
    assert int(p.m.words[0, 0]) == 0b1001


def test_all_minus_half_is_all_zero():
    p = decompose_thm(TwoBitMatrix(np.ones((3, 40), np.uint8), 1.0))
    for plane in (p.t, p.h, p.m):
        assert not plane.words.any()


def test_recompose_examples():
    def single(t, h, m):
        return ThmPlanes(pack_bits([[t]]), pack_bits([[h]]), pack_bits([[m]]), 1.0)

    assert recompose_thm(single(0, 0, 1)).levels[0, 0] == 0
    assert recompose_thm(single(1, 0, 1)).levels[0, 0] == 3
    for m in (0, 1):
        with pytest.raises(InvalidEncodingError):
            recompose_thm(single(1, 1, m))
    with pytest.raises(InvalidEncodingError):
        recompose_thm(single(1, 0, 0))
    with pytest.raises(InvalidEncodingError):
        check_planes(single(0, 1, 1))


@pytest.mark.parametrize("length", range(1, 7))
def test_bijective_exhaustive(length):
    idx = np.arange(4 ** length)[:, None]
    levels = ((idx >> (2 * np.arange(length))) & 3).astype(np.uint8)
    p = decompose_thm(TwoBitMatrix(levels, 1.0))
    np.testing.assert_array_equal(recompose_thm(p).levels, levels)
    t, h, m = planes_bits(p)
    triples = np.stack([t, h, m], axis=-1).astype(int)
    expected = np.array([TABLE[c] for c in (-1.5, -0.5, 0.5, 1.5)])[levels]
    np.testing.assert_array_equal(triples, expected)


def test_row_correction_examples():
    w = pack_signs([[1, -1, 1, 1]])
    assert row_correction_1x2(w, 1.0, 1.5)[0] == 3.0
    assert row_correction_1x2(pack_signs([[1, -1, -1, 1]]), 1.0, 1.5)[0] == 0.0
    assert row_correction_1x2(w, 2.0, 1.5)[0] == 6.0


def test_corrections_2x2_example():
    w = decompose_thm(TwoBitMatrix(np.array([[3, 1]]), 1.0))
    a = decompose_thm(TwoBitMatrix(np.array([[0, 2]]), 1.0))  # column of A, stored as a row
    c = corrections_2x2(w, a)
    assert c.row_sums[0] == 1.5
    assert c.col_sums[0] == -1.5
    assert c.const_term == 4.5
    assert c.broadcast()[0, 0] == 4.5
    centred = (3 - 1.5) * (0 - 1.5) + (1 - 1.5) * (2 - 1.5)
    assert centred == -2.5
    assert centred + c.broadcast()[0, 0] == 3 * 0 + 1 * 2


@given(st.integers(1, 40), st.floats(0.1, 4), st.floats(0.1, 4), st.integers(0, 2**32))
def test_corrections_2x2_against_dense(k, s_w, s_a, seed):
    rng = np.random.default_rng(seed)
    lw = rng.integers(0, 4, (3, k))
    la = rng.integers(0, 4, (5, k))
    w = decompose_thm(TwoBitMatrix(lw, s_w))
    a = decompose_thm(TwoBitMatrix(la, s_a))
    assert corrections_2x2(w, a).const_term == pytest.approx(9 * k * s_w * s_a / 4)
    centred = ((lw - 1.5) * s_w) @ ((la - 1.5) * s_a).T
    full = (lw * s_w) @ (la * s_a).T
    np.testing.assert_allclose(centred + corrections_2x2(w, a).broadcast(), full, rtol=1e-12, atol=1e-9)


def test_corrections_2x2_dimension_mismatch():
    w = decompose_thm(TwoBitMatrix(np.zeros((1, 3), np.uint8), 1.0))
    a = decompose_thm(TwoBitMatrix(np.zeros((1, 4), np.uint8), 1.0))
    with pytest.raises(ValueError):
        corrections_2x2(w, a)


def test_planes_padding_zero():
    p = decompose_thm(TwoBitMatrix(np.full((2, 70), 3, np.uint8), 1.0))
    for plane in (p.t, p.m):
        assert isinstance(plane, BitMatrix)
        assert int(np.bitwise_count(plane.words).sum()) == 2 * 70
