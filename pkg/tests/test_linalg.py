import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import crandn
from mimo_lab.channel import ChannelModel, draw
from mimo_lab.linalg import (
    BidiagonalReal,
    Decomposition,
    NumericalFailure,
    as_matrix,
    assemble_permuted,
    givens_pair,
    gmd,
    householder_bidiagonalize,
    majorization_gaps,
    orthonormality_error,
    reconstruction_residual,
    svd,
)
from mimo_lab.schemes import PairingPlan

SHAPES = [(1, 1), (1, 3), (3, 1), (2, 2), (4, 4), (8, 8), (8, 16), (16, 8)]

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def complex_matrices(draw, max_dim=6):
    m = draw(st.integers(1, max_dim))
    n = draw(st.integers(1, max_dim))
    re = draw(arrays(float, (m, n), elements=finite))
    im = draw(arrays(float, (m, n), elements=finite))
    return re + 1j * im


def check_factorization(h, dec, tol=1e-10):
    assert reconstruction_residual(h, dec) <= tol
    assert orthonormality_error(dec.q) <= tol
    assert orthonormality_error(dec.p) <= tol


class TestBidiagonalReal:
    def test_dense_and_blocks(self):
        b = BidiagonalReal(np.array([3.0, 2.0, 1.0]), np.array([0.5, 0.0]), (1,))
        np.testing.assert_array_equal(b.dense(), [[3, 0.5, 0], [0, 2, 0], [0, 0, 1]])
        assert b.blocks() == [(0, 2), (2, 3)]

    def test_boundary_requires_exact_zero(self):
        with pytest.raises(ValueError, match="exactly zero"):
            BidiagonalReal(np.ones(2), np.array([1e-300]), (0,))

    def test_superdiag_length(self):
        with pytest.raises(ValueError, match="superdiag"):
            BidiagonalReal(np.ones(3), np.ones(3))

    def test_diagonal_constructor_splits_everything(self):
        b = BidiagonalReal.diagonal([3.0, 2.0, 1.0])
        assert b.blocks() == [(0, 1), (1, 2), (2, 3)]

    def test_scale_columns(self):
        b = BidiagonalReal(np.array([2.0, 1.0]), np.array([1.0]))
        w = np.array([4.0, 9.0])
        np.testing.assert_allclose(b.scale_columns(w).dense(), b.dense() @ np.diag(w))


class TestSVD:
    @pytest.mark.parametrize("shape", SHAPES)
    def test_factorization(self, rng, shape):
        h = crandn(rng, *shape)
        f = svd(h)
        dec = Decomposition(q=f.u, p=f.v, scheme="SVD", b=BidiagonalReal.diagonal(f.sigma))
        check_factorization(h, dec)
        assert np.all(np.diff(f.sigma) <= 0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="non-finite"):
            svd([[1.0, np.nan]])

    def test_scalar_channel(self):
        f = svd(3.0 - 4.0j)
        assert f.sigma[0] == pytest.approx(5.0)


class TestHouseholder:
    @pytest.mark.parametrize("shape", SHAPES)
    def test_factorization(self, rng, shape):
        h = crandn(rng, *shape)
        dec = householder_bidiagonalize(h)
        check_factorization(h, dec)
        assert np.all(dec.b.diag >= 0) and np.all(dec.b.superdiag >= 0)
        assert dec.b.n == min(shape)

    def test_diagonal_input_is_fixed_point(self):
        dec = householder_bidiagonalize(np.diag([3.0, 2.0, 1.0]))
        np.testing.assert_allclose(dec.b.diag, [3, 2, 1])
        np.testing.assert_allclose(dec.b.superdiag, [0, 0])
        np.testing.assert_allclose(dec.q, np.eye(3), atol=1e-15)

    def test_zero_matrix(self):
        dec = householder_bidiagonalize(np.zeros((3, 2)))
        assert reconstruction_residual(np.zeros((3, 2)), dec) == 0.0

    def test_frobenius_preserved(self, rng):
        h = crandn(rng, 6, 6)
        b = householder_bidiagonalize(h).b.dense()
        assert np.linalg.norm(b) == pytest.approx(np.linalg.norm(h), rel=1e-12)

    @given(complex_matrices())
    def test_property_any_matrix(self, h):
        if np.linalg.norm(h) == 0:
            return
        dec = householder_bidiagonalize(h)
        check_factorization(h, dec, tol=1e-9)
        # B shares the singular values of H
        np.testing.assert_allclose(np.linalg.svd(dec.b.dense(), compute_uv=False), svd(h).sigma,
                                   atol=1e-9 * np.linalg.norm(h))


class TestGivensPair:
    def test_worked_example(self):
        gl, gr, blk = givens_pair(2.0, 1.0, np.sqrt(2.0))
        np.testing.assert_allclose(blk.dense(), [[np.sqrt(2), 1.0], [0.0, np.sqrt(2)]], atol=1e-15)
        np.testing.assert_allclose(gl @ np.diag([2.0, 1.0]) @ gr, blk.dense(), atol=1e-15)

    def test_equal_singular_values_identity(self):
        gl, gr, blk = givens_pair(1.5, 1.5, 1.5)
        np.testing.assert_array_equal(gl, np.eye(2))
        assert blk.superdiag[0] == 0.0

    def test_infeasible_target(self):
        with pytest.raises(ValueError, match="outside feasible"):
            givens_pair(2.0, 1.0, 0.5)

    @given(st.floats(0.01, 100), st.floats(0.01, 1.0), st.floats(0, 1))
    def test_property_rotation(self, hi, ratio, frac):
        lo = hi * ratio
        geo = np.sqrt(hi * lo)
        b11 = geo + frac * (hi - geo)
        gl, gr, blk = givens_pair(hi, lo, b11)
        assert orthonormality_error(gl) <= 1e-12 and orthonormality_error(gr) <= 1e-12
        np.testing.assert_allclose(gl @ np.diag([hi, lo]) @ gr, blk.dense(), atol=1e-12 * hi)
        assert blk.diag[0] * blk.diag[1] == pytest.approx(hi * lo, rel=1e-10)
        assert blk.superdiag[0] >= 0


class TestAssemblePermuted:
    def test_reconstruction_unchanged(self, rng):
        h = crandn(rng, 5, 5)
        f = svd(h)
        plan = PairingPlan.from_cutoff(4, 5)
        u, lam, v = assemble_permuted(f, plan)
        np.testing.assert_allclose(lam, f.sigma[[0, 3, 1, 2, 4]])
        np.testing.assert_allclose((u[:, :5] * lam) @ v.conj().T, h, atol=1e-12)


class TestGMD:
    @pytest.mark.parametrize("shape", [(2, 2), (4, 4), (8, 8), (8, 16), (16, 8), (1, 1)])
    def test_equal_diagonal(self, rng, shape):
        h = crandn(rng, *shape)
        dec = gmd(h)
        check_factorization(h, dec)
        target = np.exp(np.mean(np.log(svd(h).sigma)))
        np.testing.assert_allclose(dec.diag, target, rtol=1e-9)
        np.testing.assert_allclose(np.tril(dec.r, -1), 0.0)

    def test_ill_conditioned_channel(self):
        # a correlated draw where the minimum lands on the pivot position mid-way
        h = draw(ChannelModel.kronecker(8, 8, 0.95), 0, 0, 16).h
        dec = gmd(h)
        assert dec.diag.max() / dec.diag.min() == pytest.approx(1.0, abs=1e-9)
        check_factorization(h, dec)

    def test_rank_deficient(self):
        with pytest.raises(NumericalFailure, match="full-rank"):
            gmd(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_majorization(self, rng):
        h = crandn(rng, 6, 6)
        dec = householder_bidiagonalize(h)
        gaps = majorization_gaps(dec.b.diag, svd(h).sigma)
        assert np.all(gaps >= -1e-10)
        assert gaps[-1] == pytest.approx(0.0, abs=1e-10)


def test_as_matrix_rejects_bad_shapes():
    with pytest.raises(ValueError, match="2-D"):
        as_matrix(np.ones((2, 2, 2)))
