"""Spectral initialization, ScaledGD and two baselines, with per-iteration traces.

All three methods start from the same spectral initialization.  ScaledGD and
vanilla GD update the factors ``(L, R)`` simultaneously from one shared
residual; Riemannian GD works on the assembled rank-r matrix.
"""

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DegenerateInitError, DimensionError, DomainError, NumericalError, RankCollapseError
from .matkit import as_matrix, solve_gram, spectral_norm, top_r_svd
from .model import FactorPair, error_report

__all__ = [
    "SCALEDGD",
    "VANILLAGD",
    "RGD",
    "METHODS",
    "COST_CLASSES",
    "SolverConfig",
    "TraceRecord",
    "IterateTrace",
    "InitReport",
    "ContractionReport",
    "balanced_factors",
    "spectral_init",
    "scaledgd_step",
    "scaled_update",
    "vanillagd_step",
    "rgd_step",
    "run",
    "contraction_monitor",
    "envelope_violations",
]

SCALEDGD = "scaledgd"
VANILLAGD = "vanillagd"
RGD = "rgd"
METHODS = (SCALEDGD, VANILLAGD, RGD)

# leading per-iteration costs beyond the measurement operator, n = max(n1, n2)
COST_CLASSES = {
    SCALEDGD: ("O(n^2 r)", "O(r^3)"),
    VANILLAGD: ("O(n^2 r)",),
    RGD: ("O(n^2 r)", "O(n r^2)", "O(r^3)"),
}

THEOREM_MAX_STEP = 1.0 / 32.0
TRACE_COLUMNS = ("iter", "fro_rel", "spec_abs", "dist", "contraction_ratio", "wall_nanos")


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters.

    ``mu`` is the step size for ScaledGD and RGD.  For vanilla GD it is the
    normalized step ``eta``; the actual step is ``eta / sigma_1(Xstar)``.
    ``stop_tol <= 0`` disables early stopping.
    """

    method: str = SCALEDGD
    mu: float = 0.5
    max_iters: int = 100
    stop_tol: float = 0.0
    record_dist: bool = False
    record_spectral: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.mu > 0:
            raise DomainError("step size must be positive")
        if self.max_iters < 0:
            raise DomainError("max_iters must be non-negative")
        if self.stop_tol < 0:
            raise DomainError("stop_tol must be non-negative")

    @property
    def theorem_regime(self):
        """Whether ``mu`` lies in the step range covered by the convergence theorem."""
        return self.mu <= THEOREM_MAX_STEP


@dataclass
class TraceRecord:
    iter: int
    fro_rel: float
    spec_abs: float = None
    dist_val: float = None
    dist_status: str = None
    contraction_ratio: float = None
    wall_nanos: int = 0


@dataclass
class IterateTrace:
    method: str
    records: list = field(default_factory=list)
    failure: str = None
    failure_iteration: int = None
    final: object = None
    iterates: list = None

    def __len__(self):
        return len(self.records)

    @property
    def failed(self):
        return self.failure is not None

    def column(self, name):
        return np.array([np.nan if getattr(rec, name) is None else getattr(rec, name)
                         for rec in self.records], dtype=float)

    @property
    def fro_rel(self):
        return self.column("fro_rel")

    @property
    def dist(self):
        return self.column("dist_val")

    def iterations_to(self, threshold):
        """First iteration index with ``fro_rel <= threshold``, or None."""
        for rec in self.records:
            if rec.fro_rel <= threshold:
                return rec.iter
        return None

    def to_csv(self, fh=None, timing=True):
        """Write the trace as CSV; returns the text when ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in self.records:
            writer.writerow([
                rec.iter,
                _fmt(rec.fro_rel),
                _fmt(rec.spec_abs),
                _fmt(rec.dist_val),
                _fmt(rec.contraction_ratio),
                rec.wall_nanos if timing else "",
            ])
        if fh is None:
            return out.getvalue()


def _fmt(value):
    return "" if value is None else repr(float(value))


@dataclass
class InitReport:
    pair: FactorPair
    spec_gap: float
    balanced_residual: float


# -- initialization ------------------------------------------------------------


def balanced_factors(M, r):
    """Balanced rank-r factors ``(V S^{1/2}, W S^{1/2})`` of the top-r SVD of ``M``."""
    svd = top_r_svd(M, r)
    if svd.S[0] == 0.0 or svd.S[-1] <= np.finfo(float).eps * max(M.shape) * svd.S[0]:
        raise DegenerateInitError(
            f"top-{r} singular values of the initialization matrix include zero: {svd.S[-1]:.3e}"
        )
    root = np.sqrt(svd.S)
    return FactorPair(svd.U * root, svd.V * root)


def spectral_init(op, y, r, gt=None):
    """Factors from the top-r SVD of ``A*(y)``.

    ``spec_gap`` is ``||X0 - Xstar||_2`` when the ground truth is supplied
    and None otherwise.
    """
    if not 1 <= r <= min(op.n1, op.n2):
        raise DimensionError(f"rank {r} incompatible with operator shape {op.shape}")
    pair = balanced_factors(op.adjoint(y), r)
    gap = None if gt is None else spectral_norm(pair.assemble() - gt.Xstar)
    gram_l = pair.L.T @ pair.L
    balanced = float(np.linalg.norm(gram_l - pair.R.T @ pair.R))
    return InitReport(pair, gap, balanced)


# -- single steps -------------------------------------------------------------------


def _residual_gradient(X, op, y):
    return op.adjoint(y - op.apply(X))


def scaledgd_step(p, op, y, mu):
    """One ScaledGD update.

    Both factors move from the same residual ``A*(y - A(L R^T))`` and both
    preconditioners use the pre-update factors.
    """
    return scaled_update(p, _residual_gradient(p.assemble(), op, y), mu)


def scaled_update(p, G, mu):
    """``(L + mu G R (R^T R)^{-1}, R + mu G^T L (L^T L)^{-1})`` for a given descent matrix ``G``."""
    L, R = p.L, p.R
    L_next = L + mu * solve_gram(R.T @ R, G @ R)
    R_next = R + mu * solve_gram(L.T @ L, G.T @ L)
    return FactorPair(L_next, R_next)


def vanillagd_step(p, op, y, mu):
    """One plain gradient step on both factors (no Gram preconditioning)."""
    L, R = p.L, p.R
    G = _residual_gradient(L @ R.T, op, y)
    return FactorPair(L + mu * (G @ R), R + mu * (G.T @ L))


def tangent_project(G, U, V):
    """Projection of ``G`` onto the tangent space of the fixed-rank manifold at ``U S V^T``."""
    UtG = U.T @ G
    GV = G @ V
    return U @ UtG + GV @ V.T - U @ (UtG @ V) @ V.T


def rgd_step(X, op, y, mu, r):
    """One Riemannian gradient step on the rank-r manifold.

    The Euclidean gradient is projected onto the tangent space at ``X`` and
    the step is retracted by rank-r truncation.  The truncation only needs
    the SVD of a 2r x 2r core because the update has rank at most 2r.
    """
    X = as_matrix(X, "X")
    svd = top_r_svd(X, r)
    if not svd.S[-1] > 1e-12 * svd.S[0]:
        raise RankCollapseError(f"RGD iterate lost rank: sigma_r={svd.S[-1]:.3e}", svd.S[-1])
    U, S, V = svd.U, svd.S, svd.V
    G = _residual_gradient(X, op, y)
    M = U.T @ G @ V
    Q1, R1 = scipy.linalg.qr(G @ V - U @ M, mode="economic", check_finite=False)
    Q2, R2 = scipy.linalg.qr(G.T @ U - V @ M.T, mode="economic", check_finite=False)
    K = np.block([[np.diag(S) + mu * M, mu * R2.T], [mu * R1, np.zeros((r, r))]])
    a, s, bt = np.linalg.svd(K)
    U_next = np.hstack((U, Q1)) @ a[:, :r]
    V_next = np.hstack((V, Q2)) @ bt[:r].T
    return (U_next * s[:r]) @ V_next.T


# -- full runs ------------------------------------------------------------------------


def _pair_from_dense(X, r):
    svd = top_r_svd(X, r)
    root = np.sqrt(svd.S)
    return FactorPair(svd.U * root, svd.V * root)


def run(gt, op, cfg, y=None, keep_iterates=False):
    """Spectral initialization followed by ``cfg.max_iters`` steps of ``cfg.method``.

    The returned trace always holds the initialization record.  Numerical
    breakdowns (rank collapse, non-finite iterates) end the run early and are
    recorded in ``trace.failure`` instead of being raised.
    """
    if op.shape != gt.shape:
        raise DimensionError(f"operator shape {op.shape} != ground-truth shape {gt.shape}")
    y = op.apply(gt.Xstar) if y is None else np.asarray(y, dtype=float)
    r = gt.r
    trace = IterateTrace(cfg.method, iterates=[] if keep_iterates else None)

    clock = time.perf_counter_ns()
    pair = spectral_init(op, y, r).pair
    X = pair.assemble() if cfg.method == RGD else None
    elapsed = time.perf_counter_ns() - clock

    step_mu = cfg.mu / gt.sigma_max if cfg.method == VANILLAGD else cfg.mu

    def record(t):
        rep = error_report(pair, gt, with_dist=cfg.record_dist, with_spectral=cfg.record_spectral)
        trace.records.append(TraceRecord(
            t, rep.fro_rel,
            rep.spec_abs if cfg.record_spectral else None,
            rep.dist_val, rep.dist_status, None, elapsed,
        ))
        if keep_iterates:
            trace.iterates.append(pair)
        return rep.fro_rel

    fro = record(0)
    for t in range(cfg.max_iters):
        if cfg.stop_tol > 0 and fro <= cfg.stop_tol:
            break
        clock = time.perf_counter_ns()
        try:
            if cfg.method == SCALEDGD:
                pair = scaledgd_step(pair, op, y, step_mu)
            elif cfg.method == VANILLAGD:
                pair = vanillagd_step(pair, op, y, step_mu)
            else:
                X = rgd_step(X, op, y, step_mu, r)
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            if isinstance(exc, RankCollapseError):
                exc = exc.with_iteration(t)
            trace.failure = f"{type(exc).__name__}: {exc}"
            trace.failure_iteration = t
            break
        elapsed += time.perf_counter_ns() - clock
        if cfg.method == RGD:
            if not np.all(np.isfinite(X)):
                trace.failure, trace.failure_iteration = "non-finite iterate", t
                break
            pair = _pair_from_dense(X, r)
        fro = record(t + 1)
        if not np.isfinite(fro):
            trace.failure, trace.failure_iteration = "non-finite iterate", t
            break

    if cfg.record_dist:
        for prev, nxt in zip(trace.records, trace.records[1:]):
            if prev.dist_val and nxt.dist_val is not None:
                prev.contraction_ratio = nxt.dist_val / prev.dist_val
    trace.final = pair
    return trace


# -- monitors ---------------------------------------------------------------------------


@dataclass
class ContractionReport:
    entry_iter: int
    checked: int
    violations: list

    @property
    def ok(self):
        return not self.violations


def contraction_monitor(trace, gt, mu, radius=0.1, rate=0.6):
    """Check local linear contraction of ``dist`` once the iterate enters the basin.

    From the first iteration with ``dist <= radius * sigma_min`` onward, each
    step must satisfy ``dist[t+1] <= (1 - rate*mu) dist[t] + 1e-12 sigma_min``.
    Violations are returned as ``(t, dist[t], dist[t+1], bound)`` tuples.
    """
    d = trace.dist
    if np.all(np.isnan(d)):
        raise DomainError("trace was recorded without dist")
    sigma_min = gt.sigma_min
    slack = 1e-12 * sigma_min
    entry = next((t for t, val in enumerate(d) if val <= radius * sigma_min), None)
    if entry is None:
        return ContractionReport(None, 0, [])
    factor = 1.0 - rate * mu
    violations = []
    checked = 0
    for t in range(entry, len(d) - 1):
        bound = factor * d[t] + slack
        checked += 1
        if d[t + 1] > bound:
            violations.append((t, float(d[t]), float(d[t + 1]), float(bound)))
    return ContractionReport(entry, checked, violations)


def envelope_violations(values, rate, scale=1.0, slack=0.0):
    """Indices ``t`` where ``values[t] > scale * (1 - rate)^t * values[0] + slack``."""
    values = np.asarray(values, dtype=float)
    env = scale * (1.0 - rate) ** np.arange(len(values)) * values[0] + slack
    return [int(t) for t in np.flatnonzero(values > env)]
