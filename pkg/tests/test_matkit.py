import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import jacobi_eigenvalues
from scaledgd.errors import ContractError, DimensionError, RankCollapseError
from scaledgd.matkit import (
    as_matrix,
    full_svd,
    inner,
    orthonormal_complement,
    solve_gram,
    spectral_norm,
    top_r_svd,
)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestSpectralNorm:
    @pytest.mark.parametrize("shape", [(5, 3), (3, 5), (8, 8), (1, 6)])
    def test_matches_jacobi_oracle(self, rng, shape):
        A = rng.standard_normal(shape)
        lam = jacobi_eigenvalues(A.T @ A)
        assert spectral_norm(A) == pytest.approx(np.sqrt(lam[0]), rel=1e-10)

    def test_degenerate_top_pair_falls_back(self):
        # equal top singular values: power iteration stagnates
        A = np.diag([3.0, 3.0, 1.0])
        assert spectral_norm(A) == pytest.approx(3.0, rel=1e-12)

    def test_zero_and_vector(self):
        assert spectral_norm(np.zeros((4, 3))) == 0.0
        assert spectral_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
    def test_agrees_with_lapack(self, A):
        assert spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-8, abs=1e-12)


class TestSVD:
    def test_full_svd_reconstructs(self, rng):
        A = rng.standard_normal((7, 4))
        svd = full_svd(A)
        np.testing.assert_allclose(svd.reconstruct(), A, atol=1e-12)
        np.testing.assert_allclose(svd.U.T @ svd.U, np.eye(4), atol=1e-12)
        assert np.all(np.diff(svd.S) <= 0)

    def test_singular_values_match_jacobi(self, rng):
        A = rng.standard_normal((6, 4))
        np.testing.assert_allclose(full_svd(A).S, np.sqrt(jacobi_eigenvalues(A.T @ A)), rtol=1e-10)

    def test_top_r_is_best_approximation(self, rng):
        A = rng.standard_normal((9, 7))
        svd = top_r_svd(A, 3)
        assert svd.rank == 3
        full = np.linalg.svd(A, compute_uv=False)
        # Eckart-Young: residual spectral norm equals the (r+1)-th singular value
        assert np.linalg.norm(A - svd.reconstruct(), 2) == pytest.approx(full[3], rel=1e-10)

    @pytest.mark.parametrize("r", [0, 8])
    def test_top_r_range(self, rng, r):
        with pytest.raises(DimensionError):
            top_r_svd(rng.standard_normal((7, 5)), r)

    def test_rejects_bad_input(self):
        with pytest.raises(DimensionError):
            as_matrix(np.ones(3))
        with pytest.raises(ContractError):
            as_matrix(np.array([[1.0, np.nan]]))

    def test_inner_is_trace(self, rng):
        A, B = rng.standard_normal((2, 4, 3))
        assert inner(A, B) == pytest.approx(np.trace(A.T @ B))


class TestGramSolve:
    def test_matches_explicit_solve(self, rng):
        M = rng.standard_normal((10, 3))
        B = rng.standard_normal((5, 3))
        G = M.T @ M
        np.testing.assert_allclose(solve_gram(G, B), B @ np.linalg.inv(G), rtol=1e-10, atol=1e-12)

    def test_singular_gram_raises(self):
        M = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
        with pytest.raises(RankCollapseError) as info:
            solve_gram(M.T @ M, np.eye(2))
        assert info.value.sigma_min <= 1e-12

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractError):
            solve_gram(np.array([[2.0, 1.0], [0.0, 2.0]]), np.eye(2))


class TestComplement:
    def test_complement_spans_rest(self, rng):
        U, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        C = orthonormal_complement(U)
        assert C.shape == (6, 4)
        np.testing.assert_allclose(np.hstack([U, C]).T @ np.hstack([U, C]), np.eye(6), atol=1e-12)

    def test_full_rank_gives_empty(self):
        assert orthonormal_complement(np.eye(3)).shape == (3, 0)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ContractError):
            orthonormal_complement(np.ones((4, 1)))
