"""Gaussian linear measurement operator and its virtual (projected) variant.

The operator maps an n1 x n2 matrix ``X`` to ``[<A_i, X> / sqrt(m)]_i``.  Its
adjoint carries the same ``1/sqrt(m)`` factor, so ``<A(X), u> = <X, A*(u)>``
holds exactly and ``A*A`` is close to the identity on low-rank matrices.

Entries of every ``A_i`` come from a counter-based generator: entry
``(row, col)`` of ``A_i`` is a fixed function of ``(seed, i, row, col)``.
A materialized operator stores all ``A_i``; a streamed operator regenerates
them chunk by chunk on each call.  Both backends reduce over identical chunks
in the same order, so their outputs agree bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError
from .matkit import as_matrix

__all__ = [
    "MATERIALIZED",
    "STREAMED",
    "SensingOperator",
    "VirtualDirection",
    "gaussian_rows",
    "orthonormal_basis_operator",
    "estimate_rip",
    "rip_probe",
]

MATERIALIZED = "materialized"
STREAMED = "streamed"
DEFAULT_MEMORY_BUDGET = 512 * 2**20
CHUNK_ELEMENTS = 2**20

_U53 = 2.0**-53


def gaussian_rows(seed, start, stop, size):
    """Rows ``start..stop-1`` of the standard-normal measurement matrix.

    Row ``i`` is vec(A_i) in row-major order.  Each row is drawn from its own
    Philox stream keyed by ``seed`` with counter block ``i``; entry ``k`` uses
    raw words ``2k`` and ``2k+1`` as two uniforms fed to Box-Muller.
    """
    key = np.array([np.uint64(seed), 0], dtype=np.uint64)
    out = np.empty((stop - start, size))
    # one generator per call (thread safety); resetting its state per row is
    # much cheaper than constructing a new one
    bitgen = np.random.Philox(key=key)
    block = max(1, CHUNK_ELEMENTS // size)
    for lo in range(start, stop, block):
        hi = min(lo + block, stop)
        raw = np.empty((hi - lo, 2 * size), dtype=np.uint64)
        for row, i in enumerate(range(lo, hi)):
            bitgen.state = {
                "bit_generator": "Philox",
                "state": {"counter": np.array([0, 0, i, 0], dtype=np.uint64), "key": key},
                "buffer": np.zeros(4, dtype=np.uint64),
                "buffer_pos": 4,
                "has_uint32": 0,
                "uinteger": 0,
            }
            raw[row] = bitgen.random_raw(2 * size)
        u1 = ((raw[:, 0::2] >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
        u2 = ((raw[:, 1::2] >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
        out[lo - start:hi - start] = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return out


@dataclass(frozen=True)
class VirtualDirection:
    """A pair of unit vectors ``(w, v)`` spanning the rank-one matrix ``w v^T``."""

    w: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("w", "v"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.ndim != 1:
                raise DimensionError(f"{name} must be a vector")
            if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
                raise ContractError(f"{name} is not a unit vector")
            object.__setattr__(self, name, vec)

    @classmethod
    def from_vectors(cls, w, v):
        w = np.asarray(w, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return cls(w / np.linalg.norm(w), v / np.linalg.norm(v))

    @property
    def outer(self):
        return np.outer(self.w, self.v)

    def project(self, Z):
        """Remove the component of ``Z`` along ``w v^T``."""
        return Z - (self.w @ Z @ self.v) * self.outer


class SensingOperator:
    """Linear map ``X -> [<A_i, X> / sqrt(m)]_{i<m}`` on n1 x n2 matrices.

    Build one with :meth:`gaussian` (seeded i.i.d. N(0, 1) entries) or
    :meth:`from_matrices` (explicit ``A_i``, for exact tests).  Instances are
    immutable; every method is a pure function of its arguments.
    """

    def __init__(self, n1, n2, m, seed=None, backend=MATERIALIZED, matrix=None):
        self.n1, self.n2, self.m = int(n1), int(n2), int(m)
        if min(self.n1, self.n2, self.m) < 1:
            raise DimensionError("n1, n2 and m must be positive")
        if backend not in (MATERIALIZED, STREAMED):
            raise ContractError(f"unknown backend {backend!r}")
        if backend == STREAMED and seed is None:
            raise ContractError("a streamed operator needs a seed to regenerate A_i")
        self.seed = None if seed is None else int(seed)
        self.backend = backend
        self._matrix = None
        if backend == MATERIALIZED:
            if matrix is None:
                matrix = gaussian_rows(self.seed, 0, self.m, self.size)
            matrix = np.ascontiguousarray(matrix, dtype=np.float64)
            if matrix.shape != (self.m, self.size):
                raise DimensionError(f"matrix shape {matrix.shape} != {(self.m, self.size)}")
            matrix.setflags(write=False)
            self._matrix = matrix
        self.scale = 1.0 / np.sqrt(self.m)
        self.chunk_rows = max(1, CHUNK_ELEMENTS // self.size)

    @classmethod
    def gaussian(cls, n1, n2, m, seed, backend="auto", memory_budget=DEFAULT_MEMORY_BUDGET):
        """Gaussian operator; ``backend='auto'`` materializes when it fits the budget."""
        if backend == "auto":
            backend = MATERIALIZED if m * n1 * n2 * 8 <= memory_budget else STREAMED
        return cls(n1, n2, m, seed=seed, backend=backend)

    @classmethod
    def from_matrices(cls, matrices):
        """Operator whose measurement matrices are exactly ``matrices``."""
        mats = np.asarray(matrices, dtype=np.float64)
        if mats.ndim != 3:
            raise DimensionError("expected a stack of matrices with shape (m, n1, n2)")
        m, n1, n2 = mats.shape
        return cls(n1, n2, m, seed=None, backend=MATERIALIZED, matrix=mats.reshape(m, n1 * n2))

    @property
    def size(self):
        return self.n1 * self.n2

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def forced(self):
        return self.seed is None

    def __repr__(self):
        return (f"SensingOperator(n1={self.n1}, n2={self.n2}, m={self.m}, "
                f"seed={self.seed}, backend={self.backend!r})")

    # -- access to the measurement matrices ------------------------------

    def chunks(self):
        """Yield ``(start, block)`` with ``block[k] = vec(A_{start+k})``."""
        for start in range(0, self.m, self.chunk_rows):
            stop = min(start + self.chunk_rows, self.m)
            if self._matrix is not None:
                yield start, self._matrix[start:stop]
            else:
                yield start, gaussian_rows(self.seed, start, stop, self.size)

    def measurement_matrix(self, i):
        """``A_i`` as an n1 x n2 array (unscaled)."""
        if not 0 <= i < self.m:
            raise IndexError(f"measurement index {i} out of range [0, {self.m})")
        if self._matrix is not None:
            row = self._matrix[i]
        else:
            row = gaussian_rows(self.seed, i, i + 1, self.size)[0]
        return row.reshape(self.n1, self.n2).copy()

    def materialize(self):
        """Materialized twin of this operator (same measurements)."""
        if self._matrix is not None:
            return self
        return SensingOperator(self.n1, self.n2, self.m, seed=self.seed, backend=MATERIALIZED)

    # -- forward and adjoint ---------------------------------------------

    def _check_X(self, X):
        X = as_matrix(X, "X")
        if X.shape != self.shape:
            raise DimensionError(f"X has shape {X.shape}, operator expects {self.shape}")
        return X

    def _check_u(self, u, length):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (length,):
            raise DimensionError(f"measurement vector has shape {u.shape}, expected ({length},)")
        return u

    def apply(self, X):
        """``A(X)``: vector of ``<A_i, X> / sqrt(m)``."""
        x = self._check_X(X).ravel()
        out = np.empty(self.m)
        for start, block in self.chunks():
            out[start:start + block.shape[0]] = block @ x
        return out * self.scale

    def adjoint(self, u):
        """``A*(u) = sum_i u_i A_i / sqrt(m)``."""
        u = self._check_u(u, self.m)
        acc = np.zeros(self.size)
        for start, block in self.chunks():
            acc += block.T @ u[start:start + block.shape[0]]
        return (acc * self.scale).reshape(self.shape)

    def normal(self, X):
        """``A*A(X)``."""
        return self.adjoint(self.apply(X))

    # -- virtual operator -------------------------------------------------

    def _check_direction(self, d):
        if d.w.shape != (self.n1,) or d.v.shape != (self.n2,):
            raise DimensionError("direction does not match operator dimensions")

    def project_perp(self, d, i):
        """``A_i - <A_i, w v^T> w v^T``."""
        self._check_direction(d)
        return d.project(self.measurement_matrix(i))

    def apply_virtual(self, d, X):
        """Virtual operator with ``m + 1`` outputs.

        The first ``m`` entries measure ``X`` with the projected matrices
        ``P_perp(A_i)``; the last entry is ``<w v^T, X>``.
        """
        self._check_direction(d)
        X = self._check_X(X)
        x = X.ravel()
        wv = d.outer.ravel()
        out = np.empty(self.m + 1)
        for start, block in self.chunks():
            proj = block - np.outer(block @ wv, wv)
            out[start:start + block.shape[0]] = proj @ x
        out[:self.m] *= self.scale
        out[self.m] = float(wv @ x)
        return out

    def adjoint_virtual(self, d, u):
        """Adjoint of :meth:`apply_virtual`."""
        self._check_direction(d)
        u = self._check_u(u, self.m + 1)
        return d.project(self.adjoint(u[:self.m])) + u[self.m] * d.outer

    def normal_virtual(self, d, X):
        return self.adjoint_virtual(d, self.apply_virtual(d, X))

    # -- manifest header ----------------------------------------------------

    def header(self):
        """Five-line ``key=value`` record identifying this operator."""
        seed = "forced" if self.seed is None else str(self.seed)
        return (f"n1={self.n1}\nn2={self.n2}\nm={self.m}\n"
                f"seed={seed}\nbackend={self.backend}\n")

    @classmethod
    def from_header(cls, text):
        fields = dict(line.split("=", 1) for line in text.strip().splitlines())
        if set(fields) != {"n1", "n2", "m", "seed", "backend"}:
            raise ContractError(f"malformed operator header: {sorted(fields)}")
        if fields["seed"] == "forced":
            raise ContractError("forced operators cannot be rebuilt from a header")
        return cls(int(fields["n1"]), int(fields["n2"]), int(fields["m"]),
                   seed=int(fields["seed"]), backend=fields["backend"])


def orthonormal_basis_operator(n1, n2, rng=None):
    """Forced operator with ``A*A = I`` exactly (up to rounding).

    The ``A_i`` are ``sqrt(n1 n2)`` times an orthonormal basis of the matrix
    space, the identity basis when ``rng`` is None and a random rotation of it
    otherwise.  The prefactor cancels the ``1/sqrt(m)`` scaling.
    """
    size = n1 * n2
    if rng is None:
        basis = np.eye(size)
    else:
        basis, _ = np.linalg.qr(rng.standard_normal((size, size)))
    return SensingOperator.from_matrices(np.sqrt(size) * basis.reshape(size, n1, n2))


def _random_orthonormal(rng, n, r):
    Q, R = np.linalg.qr(rng.standard_normal((n, r)))
    return Q * np.sign(np.diag(R))


def rip_probe(op, r, trials, seed):
    """Running maximum of ``| ||A(Z)||^2 - 1 |`` over sampled unit-norm rank-r ``Z``.

    ``Z = U diag(s) V^T`` with Haar-like orthonormal ``U, V`` and ``s`` drawn
    uniformly from the simplex, then rescaled to ``||Z||_F = 1``.  Samples are
    drawn sequentially from one generator, so a longer probe extends a shorter
    one with the same seed.
    """
    if trials < 1:
        raise DomainError("trials must be at least 1")
    if not 1 <= r <= min(op.n1, op.n2):
        raise DimensionError(f"rank {r} incompatible with {op.shape}")
    rng = np.random.default_rng(seed)
    best = np.empty(trials)
    running = 0.0
    for k in range(trials):
        U = _random_orthonormal(rng, op.n1, r)
        V = _random_orthonormal(rng, op.n2, r)
        s = rng.dirichlet(np.ones(r)) if r > 1 else np.ones(1)
        s /= np.linalg.norm(s)
        y = op.apply((U * s) @ V.T)
        running = max(running, abs(float(y @ y) - 1.0))
        best[k] = running
    return best


def estimate_rip(op, r, trials, seed):
    """Empirical lower bound on the rank-r restricted isometry constant."""
    return float(rip_probe(op, r, trials, seed)[-1])

