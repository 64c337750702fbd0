"""Dense linear-algebra kernels used throughout the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The helpers
here validate shapes and finiteness at the boundary and never mutate their
inputs.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ContractError, DimensionError, RankCollapseError

__all__ = [
    "CompactSVD",
    "as_matrix",
    "inner",
    "top_r_svd",
    "full_svd",
    "spectral_norm",
    "solve_gram",
    "orthonormal_complement",
]

POWER_TOL = 1e-12
POWER_MAX_ITERS = 5000
GRAM_GUARD = 1e-14


def as_matrix(A, name="matrix"):
    """Return ``A`` as a 2-D float64 array, rejecting NaN/Inf entries."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ContractError(f"{name} contains non-finite entries")
    return A


def inner(A, B):
    """Trace inner product <A, B> = sum_ij A_ij B_ij."""
    return float(np.vdot(A, B))


@dataclass(frozen=True)
class CompactSVD:
    """Truncated singular value decomposition ``U @ diag(S) @ V.T``.

    ``U`` is n x k and ``V`` is m x k with orthonormal columns; ``S`` is
    non-negative and sorted in non-increasing order.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.S.shape[0]

    def reconstruct(self):
        return (self.U * self.S) @ self.V.T


def full_svd(A):
    """Thin SVD with k = min(rows, cols) via Golub-Kahan bidiagonalization.

    LAPACK ``gesvd`` reduces to bidiagonal form with Householder reflections
    and then runs implicit-shift QR on the bidiagonal.
    """
    A = as_matrix(A)
    if A.size == 0:
        raise DimensionError("cannot decompose an empty matrix")
    U, S, Vt = scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesvd", check_finite=False)
    return CompactSVD(U, S, Vt.T)


def top_r_svd(A, r):
    """Leading ``r`` singular triplets of ``A``.

    Parameters
    ----------
    A : array_like, shape (n, m)
    r : int
        Number of triplets, ``1 <= r <= min(n, m)``.

    Returns
    -------
    CompactSVD
        ``U`` of shape (n, r), ``S`` of length r, ``V`` of shape (m, r).
        Equal singular values may come with any orthonormal basis of their
        joint subspace.
    """
    A = as_matrix(A)
    r = int(r)
    if not 1 <= r <= min(A.shape):
        raise DimensionError(f"rank {r} outside [1, {min(A.shape)}] for shape {A.shape}")
    svd = full_svd(A)
    return CompactSVD(svd.U[:, :r].copy(), svd.S[:r].copy(), svd.V[:, :r].copy())


def _start_vector(n):
    # fixed generic start vector: deterministic and almost surely not orthogonal
    # to the leading right singular vector
    return np.random.default_rng(0x5EED).standard_normal(n)


def spectral_norm(A, tol=POWER_TOL, max_iters=POWER_MAX_ITERS):
    """Largest singular value of ``A``.

    Power iteration on ``A.T @ A``.  The stopping rule extrapolates the
    remaining eigenvalue error from the observed geometric rate (Aitken), so
    slow-gap problems do not stop early.  If the rate estimate shows
    stagnation, or ``max_iters`` is hit, the value comes from a full SVD.
    """
    A = as_matrix(A)
    if A.size == 0:
        raise DimensionError("spectral norm of an empty matrix")
    if not np.any(A):
        return 0.0
    if min(A.shape) == 1:
        return float(np.linalg.norm(A))

    v = _start_vector(A.shape[1])
    v /= np.linalg.norm(v)
    lam_prev = None
    delta_prev = None
    for k in range(max_iters):
        Av = A @ v
        lam = float(Av @ Av)
        w = A.T @ Av
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        if lam_prev is not None:
            delta = lam - lam_prev
            if delta <= tol * lam:
                if delta <= 0.0 or delta_prev is None or delta_prev <= 0.0:
                    return float(np.sqrt(lam if delta <= 0 else lam + delta))
                rho = delta / delta_prev
                if rho < 1.0 and delta * rho / (1.0 - rho) <= tol * lam:
                    return float(np.sqrt(lam + delta * rho / (1.0 - rho)))
            if delta_prev is not None and delta_prev > 0 and k > 50 and delta / delta_prev > 0.999:
                break
            delta_prev = delta
        lam_prev = lam
    return float(full_svd(A).S[0])


def solve_gram(G, B):
    """Return ``X`` with ``X @ G = B`` for a symmetric positive-definite ``G``.

    Uses a Cholesky factorization, never an explicit inverse.

    Raises
    ------
    RankCollapseError
        If the smallest eigenvalue of ``G`` is at most ``1e-14 * trace(G)``.
    """
    G = as_matrix(G, "G")
    B = as_matrix(B, "B")
    r = G.shape[0]
    if G.shape != (r, r) or B.shape[1] != r:
        raise DimensionError(f"solve_gram: G {G.shape} incompatible with B {B.shape}")
    scale = max(1.0, float(np.max(np.abs(G)))) if r else 1.0
    if np.max(np.abs(G - G.T), initial=0.0) > 1e-12 * scale:
        raise ContractError("Gram matrix is not symmetric")
    G = 0.5 * (G + G.T)
    eig_min = float(np.linalg.eigvalsh(G)[0])
    trace = float(np.trace(G))
    if not eig_min > GRAM_GUARD * trace or trace <= 0.0:
        raise RankCollapseError(
            f"Gram matrix near singular: lambda_min={eig_min:.3e}, trace={trace:.3e}", eig_min
        )
    factor = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
    return scipy.linalg.cho_solve(factor, B.T, check_finite=False).T


def orthonormal_complement(U, tol=1e-10):
    """Orthonormal basis of the orthogonal complement of ``range(U)``.

    ``U`` (n x r) must have orthonormal columns.  Returns an n x (n - r)
    array, possibly with zero columns.
    """
    U = as_matrix(U, "U")
    n, r = U.shape
    if r > n:
        raise DimensionError(f"{r} orthonormal columns cannot live in R^{n}")
    if np.linalg.norm(U.T @ U - np.eye(r)) > tol:
        raise ContractError("columns of U are not orthonormal")
    if r == n:
        return np.zeros((n, 0))
    Q, _ = scipy.linalg.qr(U, mode="full", check_finite=False)
    return Q[:, r:].copy()
