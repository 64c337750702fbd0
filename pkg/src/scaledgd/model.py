"""Ground truth, factorized iterates and recovery error metrics."""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .matkit import as_matrix, spectral_norm

__all__ = [
    "CONVERGED",
    "FELL_BACK",
    "NORM_CHAIN_FACTOR",
    "GroundTruth",
    "FactorPair",
    "ErrorReport",
    "generate_ground_truth",
    "assemble",
    "dist",
    "error_report",
]

CONVERGED = "converged"
FELL_BACK = "fell_back_to_upper_bound"

# dist(X, X*) <= NORM_CHAIN_FACTOR * ||X - X*||_F for rank-r X, X*
NORM_CHAIN_FACTOR = float(np.sqrt(np.sqrt(2.0) + 1.0))

_ROUNDOFF = 8 * np.finfo(float).eps
_BLOB_MAGIC = b"SGDT"
_BLOB_FORMAT = "<4sHIIIdQ"


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Rank-r target ``Xstar = Vstar @ diag(Sigma) @ Wstar.T``."""

    Xstar: np.ndarray
    Vstar: np.ndarray
    Wstar: np.ndarray
    Sigma: np.ndarray
    kappa: float
    seed: int = None

    @property
    def shape(self):
        return self.Xstar.shape

    @property
    def r(self):
        return self.Sigma.shape[0]

    @property
    def sigma_max(self):
        return float(self.Sigma[0])

    @property
    def sigma_min(self):
        return float(self.Sigma[-1])

    @property
    def Lstar(self):
        return self.Vstar * np.sqrt(self.Sigma)

    @property
    def Rstar(self):
        return self.Wstar * np.sqrt(self.Sigma)

    @property
    def fro_norm(self):
        return float(np.linalg.norm(self.Sigma))

    def to_blob(self):
        """Compact header (dims, rank, kappa, seed); the payload is regenerated from the seed."""
        if self.seed is None:
            raise DomainError("only seeded ground truths can be serialized")
        n1, n2 = self.shape
        return struct.pack(_BLOB_FORMAT, _BLOB_MAGIC, 1, n1, n2, self.r, self.kappa, self.seed)

    @classmethod
    def from_blob(cls, blob):
        magic, version, n1, n2, r, kappa, seed = struct.unpack(_BLOB_FORMAT, blob)
        if magic != _BLOB_MAGIC or version != 1:
            raise DomainError("not a ground-truth blob")
        return generate_ground_truth(n1, n2, r, kappa, seed)


def _orthonormal(rng, n, r):
    Q, R = np.linalg.qr(rng.standard_normal((n, r)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def generate_ground_truth(n1, n2, r, kappa, seed):
    """Random rank-r matrix with condition number exactly ``kappa``.

    Singular vectors come from QR of Gaussian matrices.  The largest and
    smallest singular values are pinned to 1 and 1/kappa; the remaining r - 2
    are uniform on [1/kappa, 1].  For r = 1 the single value is 1 and the
    recorded condition number is 1.
    """
    if not 1 <= r <= min(n1, n2):
        raise DimensionError(f"rank {r} outside [1, {min(n1, n2)}]")
    if not kappa >= 1.0:
        raise DomainError(f"condition number must be >= 1, got {kappa}")
    rng = np.random.default_rng(seed)
    V = _orthonormal(rng, n1, r)
    W = _orthonormal(rng, n2, r)
    if r == 1:
        sigma = np.ones(1)
    else:
        interior = rng.uniform(1.0 / kappa, 1.0, size=r - 2)
        sigma = np.sort(np.concatenate(([1.0, 1.0 / kappa], interior)))[::-1].copy()
    X = (V * sigma) @ W.T
    return GroundTruth(X, V, W, sigma, float(sigma[0] / sigma[-1]), seed)


@dataclass(frozen=True, eq=False)
class FactorPair:
    """Factorized iterate ``X = L @ R.T`` with ``L`` n1 x r and ``R`` n2 x r."""

    L: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        L = as_matrix(self.L, "L")
        R = as_matrix(self.R, "R")
        if L.shape[1] != R.shape[1]:
            raise DimensionError(f"factor ranks differ: {L.shape} vs {R.shape}")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "R", R)

    @property
    def r(self):
        return self.L.shape[1]

    @property
    def shape(self):
        return (self.L.shape[0], self.R.shape[0])

    def assemble(self):
        return self.L @ self.R.T

    def reparametrize(self, Q):
        """``(L Q, R Q^{-T})``: same product, different factors."""
        return FactorPair(self.L @ Q, np.linalg.solve(Q, self.R.T).T)


def assemble(p):
    """``L @ R.T``."""
    return p.assemble()


@dataclass
class ErrorReport:
    fro_rel: float
    spec_abs: float
    dist_val: float = None
    dist_status: str = None


@dataclass
class _AlignmentResult:
    value: float
    status: str
    Q: np.ndarray = field(default=None, repr=False)
    iterations: int = 0


def _alignment_objective(L, R, Lstar, Rstar, s, Q):
    Qinv_t = np.linalg.inv(Q).T
    E1 = (L @ Q - Lstar) * s
    E2 = (R @ Qinv_t - Rstar) * s
    return E1, E2, Qinv_t


def _jacobian(L, R, s, Qinv_t):
    # columns indexed by (a, b) of dQ; rows by the entries of E1 then E2
    r = L.shape[1]
    eye = np.eye(r)
    J1 = np.einsum("ia,cb,b->icab", L, eye, s)
    P = R @ Qinv_t
    N = Qinv_t * s
    J2 = -np.einsum("ib,ac->icab", P, N)
    return np.concatenate((J1.reshape(-1, r * r), J2.reshape(-1, r * r)))


def align_factors(p, gt, max_iters=200, gtol=1e-10):
    """Minimize the Sigma-weighted factor misfit over invertible ``Q``.

    Gauss-Newton with Armijo backtracking in the multiplicative coordinates
    ``Q (I + D)``, started from the least-squares alignment
    ``Q0 = (L^T L)^{-1} L^T Lstar``.  Returns the root of the best
    objective value and whether the iteration converged.
    """
    L, R = p.L, p.R
    Lstar, Rstar = gt.Lstar, gt.Rstar
    s = np.sqrt(gt.Sigma)
    scale = 2.0 * float(gt.Sigma @ gt.Sigma)

    try:
        Q = np.linalg.lstsq(L, Lstar, rcond=None)[0]
        E1, E2, Qinv_t = _alignment_objective(L, R, Lstar, Rstar, s, Q)
    except np.linalg.LinAlgError:
        return _AlignmentResult(np.inf, FELL_BACK)
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(Qinv_t))):
        return _AlignmentResult(np.inf, FELL_BACK)

    e = np.concatenate((E1.ravel(), E2.ravel()))
    f = float(e @ e)
    eye = np.eye(Q.shape[0])
    for it in range(max_iters):
        # multiplicative coordinates Q (I + D): the gradient in D does not
        # depend on how (L, R) happen to be parametrized
        J = _jacobian(L @ Q, R @ Qinv_t, s, eye)
        grad = 2.0 * (J.T @ e)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= gtol * scale:
            return _AlignmentResult(np.sqrt(f), CONVERGED, Q, it)
        step = np.linalg.lstsq(J, -e, rcond=None)[0].reshape(Q.shape)
        slope = float(grad @ step.ravel())
        if slope >= 0:
            step = -grad.reshape(Q.shape)
            slope = -gnorm**2
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            Q_try = Q @ (eye + alpha * step)
            try:
                E1, E2, Qinv_t_try = _alignment_objective(L, R, Lstar, Rstar, s, Q_try)
            except np.linalg.LinAlgError:
                alpha *= 0.5
                continue
            e_try = np.concatenate((E1.ravel(), E2.ravel()))
            f_try = float(e_try @ e_try)
            if np.isfinite(f_try) and f_try <= f + 1e-4 * alpha * slope + _ROUNDOFF * f:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no decrease representable in floating point: accept if the
            # gradient is at roundoff level, otherwise report failure
            status = CONVERGED if gnorm <= 1e-7 * scale else FELL_BACK
            return _AlignmentResult(np.sqrt(f), status, Q, it)
        Q, Qinv_t, e, f = Q_try, Qinv_t_try, e_try, f_try
    return _AlignmentResult(np.sqrt(f), FELL_BACK, Q, max_iters)


def dist(p, gt):
    """GL(r)-invariant distance between factor pair ``p`` and the truth.

    Returns ``(value, status)``.  ``status`` is :data:`CONVERGED` when the
    numerical minimizer over ``Q`` converged to a well-conditioned ``Q``
    and its value respects the norm-chain bound; otherwise the bound
    ``sqrt(sqrt(2) + 1) * ||L R^T - Xstar||_F`` is returned with status
    :data:`FELL_BACK`.
    """
    if p.r != gt.r:
        raise DimensionError(f"iterate rank {p.r} != ground-truth rank {gt.r}")
    if p.shape != gt.shape:
        raise DimensionError(f"iterate shape {p.shape} != ground-truth shape {gt.shape}")
    bound = NORM_CHAIN_FACTOR * float(np.linalg.norm(p.assemble() - gt.Xstar))
    res = align_factors(p, gt)
    if res.status == CONVERGED:
        sv = np.linalg.svd(res.Q, compute_uv=False)
        if sv[-1] >= 1e-10 and res.value <= bound + 1e-8:
            return float(res.value), CONVERGED
    return bound, FELL_BACK


def error_report(p, gt, with_dist=True, with_spectral=True):
    """Relative Frobenius, absolute spectral and (optionally) dist errors."""
    if p.shape != gt.shape or p.r != gt.r:
        raise DimensionError("iterate and ground truth are inconsistent")
    E = p.assemble() - gt.Xstar
    fro_rel = float(np.linalg.norm(E)) / gt.fro_norm
    spec = spectral_norm(E) if with_spectral else float("nan")
    if with_dist:
        d, status = dist(p, gt)
        return ErrorReport(fro_rel, spec, d, status)
    return ErrorReport(fro_rel, spec)
