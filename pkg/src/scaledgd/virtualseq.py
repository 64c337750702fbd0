"""Virtual sequences and offline audits of the decoupling argument.

For a rank-one direction ``w v^T`` the virtual operator measures with the
projected matrices ``P_perp(A_i) = A_i - <A_i, w v^T> w v^T`` plus one extra
coordinate ``<w v^T, X>``.  A virtual sequence is ScaledGD started from the
top-r SVD of ``A_wv* A_wv (Xstar)``.

Two drivers are available for the iterations after initialization:

``"real"`` (default)
    steps use the real residual ``A*(y - A(X))``, exactly as the displayed
    virtual-sequence algorithm is written.
``"virtual"``
    steps use ``A_wv* A_wv (Xstar - X)``, i.e. the real operator is replaced
    everywhere.  Only this driver makes the whole trajectory a function of
    the projected measurements alone.

The sup over an epsilon-net in the analysis is replaced by a max over a
finite random sample of directions.  All audits run after the fact on stored
trajectories.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .matkit import spectral_norm, top_r_svd
from .sensing import VirtualDirection
from .solvers import SolverConfig, balanced_factors, run, scaled_update

__all__ = [
    "DirectionSample",
    "CoupledTrace",
    "AuditRow",
    "AuditReport",
    "sample_directions",
    "horizon_T",
    "real_trajectory",
    "run_virtual",
    "coupled_diagnostics",
    "decoupling_audit",
]

REAL_DRIVER = "real"
VIRTUAL_DRIVER = "virtual"


@dataclass
class DirectionSample:
    directions: list
    seed: int

    def __len__(self):
        return len(self.directions)

    def __iter__(self):
        return iter(self.directions)

    def __getitem__(self, k):
        return self.directions[k]


def sample_directions(n1, n2, K, seed):
    """``K`` independent pairs of uniformly random unit vectors."""
    if K < 1:
        raise DomainError("need at least one direction")
    rng = np.random.default_rng(seed)
    dirs = [VirtualDirection.from_vectors(rng.standard_normal(n1), rng.standard_normal(n2))
            for _ in range(K)]
    return DirectionSample(dirs, seed)


def horizon_T(mu, r):
    """Number of iterations ``ceil((10 / mu) * ln(10 sqrt(r)))`` (natural log)."""
    if not mu > 0 or r < 1:
        raise DomainError("need mu > 0 and r >= 1")
    value = 10.0 / mu * math.log(10.0 * math.sqrt(r))
    nearest = round(value)
    # exact integers can come out a few ulps high
    if abs(value - nearest) <= 1e-12 * max(1.0, value):
        return int(nearest)
    return math.ceil(value)


def real_trajectory(gt, op, mu, T, y=None):
    """ScaledGD factor pairs ``(L_t, R_t)`` for ``t = 0..T``."""
    cfg = SolverConfig(mu=mu, max_iters=T, stop_tol=0.0, record_spectral=False)
    trace = run(gt, op, cfg, y=y, keep_iterates=True)
    if trace.failed:
        raise RuntimeError(f"real trajectory failed: {trace.failure}")
    return trace.iterates


def run_virtual(gt, op, d, mu, T, y=None, driver=REAL_DRIVER):
    """Virtual sequence for direction ``d``: list of ``T + 1`` factor pairs."""
    if T < 1:
        raise DomainError("T must be at least 1")
    if driver not in (REAL_DRIVER, VIRTUAL_DRIVER):
        raise DomainError(f"unknown driver {driver!r}")
    pair = balanced_factors(op.normal_virtual(d, gt.Xstar), gt.r)
    if driver == REAL_DRIVER:
        y = op.apply(gt.Xstar) if y is None else y
    else:
        y_virtual = op.apply_virtual(d, gt.Xstar)
    traj = [pair]
    for _ in range(T):
        X = pair.assemble()
        if driver == REAL_DRIVER:
            G = op.adjoint(y - op.apply(X))
        else:
            G = op.adjoint_virtual(d, y_virtual - op.apply_virtual(d, X))
        pair = scaled_update(pair, G, mu)
        traj.append(pair)
    return traj


# -- coupled diagnostics ------------------------------------------------------------


@dataclass
class CoupledTrace:
    """Per-iteration, per-direction gaps between the real and virtual iterates.

    ``fro_gap[t, k] = ||X_t - X_t^k||_F``; ``proj_gap_V`` and ``proj_gap_W``
    are the Frobenius norms of its projections onto the column and row spaces
    of ``Xstar``.  ``G`` adds the spectral error to the largest Frobenius gap;
    ``G_star`` adds the projected spectral errors to the largest projected
    gaps.
    """

    fro_gap: np.ndarray
    proj_gap_V: np.ndarray
    proj_gap_W: np.ndarray
    spec_err: np.ndarray
    G: np.ndarray
    G_star: np.ndarray
    subspace_misalignment: np.ndarray = field(repr=False, default=None)

    @property
    def T(self):
        return self.fro_gap.shape[0] - 1

    @property
    def K(self):
        return self.fro_gap.shape[1]

    def to_csv(self, fh=None):
        """Long format: one row per (t, direction, side) with side in {V, W}."""
        out = io.StringIO() if fh is None else fh
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["t", "direction_index", "side", "fro_gap", "proj_gap",
                         "spec_err", "G_t", "G_t_star"])
        for t in range(self.fro_gap.shape[0]):
            for k in range(self.K):
                for side, gaps in (("V", self.proj_gap_V), ("W", self.proj_gap_W)):
                    writer.writerow([t, k, side, repr(float(self.fro_gap[t, k])),
                                     repr(float(gaps[t, k])), repr(float(self.spec_err[t])),
                                     repr(float(self.G[t])), repr(float(self.G_star[t]))])
        if fh is None:
            return out.getvalue()


def coupled_diagnostics(real_traj, virtual_trajs, gt):
    """Evaluate the coupled quantities along stored trajectories."""
    if not virtual_trajs:
        raise DomainError("need at least one virtual trajectory")
    n_t = len(real_traj)
    if any(len(traj) != n_t for traj in virtual_trajs):
        raise DimensionError("virtual trajectories must match the real trajectory length")
    K = len(virtual_trajs)
    V, W, X_star = gt.Vstar, gt.Wstar, gt.Xstar
    fro_gap = np.empty((n_t, K))
    gap_V = np.empty((n_t, K))
    gap_W = np.empty((n_t, K))
    spec_err = np.empty(n_t)
    G_star = np.empty(n_t)
    misalign = np.empty(n_t)
    for t, pair in enumerate(real_traj):
        X = pair.assemble()
        E = X_star - X
        spec_err[t] = spectral_norm(E)
        for k, traj in enumerate(virtual_trajs):
            D = X - traj[t].assemble()
            fro_gap[t, k] = np.linalg.norm(D)
            gap_V[t, k] = np.linalg.norm(V.T @ D)
            gap_W[t, k] = np.linalg.norm(D @ W)
        G_star[t] = (spectral_norm(V.T @ E) + spectral_norm(E @ W)
                     + gap_V[t].max() + gap_W[t].max())
        misalign[t] = _misalignment(X, gt)
    G = spec_err + fro_gap.max(axis=1)
    return CoupledTrace(fro_gap, gap_V, gap_W, spec_err, G, G_star, misalign)


def _misalignment(X, gt):
    """``max(||V_perp^T V_t||, ||W_perp^T W_t||)`` for the top-r singular spaces of ``X``."""
    svd = top_r_svd(X, gt.r)
    left = svd.U - gt.Vstar @ (gt.Vstar.T @ svd.U)
    right = svd.V - gt.Wstar @ (gt.Wstar.T @ svd.V)
    return max(np.linalg.norm(left, 2), np.linalg.norm(right, 2))


# -- audits -------------------------------------------------------------------------------


@dataclass
class AuditRow:
    t: int
    direction_index: int
    metric: str
    lhs: float
    rhs: float
    violated: bool


@dataclass
class AuditReport:
    rows: list
    skipped: int = 0

    @property
    def checks(self):
        return len(self.rows)

    @property
    def violations(self):
        return [row for row in self.rows if row.violated]

    def count(self, metric, violated_only=False):
        return sum(1 for row in self.rows
                   if row.metric == metric and (row.violated or not violated_only))

    def summary(self):
        return (f"checks={self.checks} violations={len(self.violations)} "
                f"skipped_preconditions={self.skipped}")

    def to_csv(self, fh=None):
        out = io.StringIO() if fh is None else fh
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["t", "direction_index", "metric_name", "lhs", "rhs", "violated"])
        for row in self.rows:
            writer.writerow([row.t, row.direction_index, row.metric, repr(float(row.lhs)),
                             repr(float(row.rhs)), int(row.violated)])
        if fh is None:
            return out.getvalue()


def decoupling_audit(real_traj, virtual_trajs, op, dirs, gt, coupled=None,
                     closeness=0.1, split_tol=1e-9):
    """Check the decoupling inequalities on every (iteration, direction) pair.

    Metrics
    -------
    ``decoupling``
        ``|<w v^T, A*A(Z)>| <= 4 sqrt((n1 + n2) / m) ||A(Z)||_2`` with
        ``Z = P_perp(Xstar - X_t^k)``.
    ``closeness``
        ``||X_t - X_t^k||_F <= closeness * sigma_min``.
    ``projection_split``
        ``||X_t - X_t^k||_F <= 5/4 (proj_gap_V + proj_gap_W)``, checked only
        where its preconditions hold on the trace; other iterations are
        counted in ``skipped``.
    """
    if len(virtual_trajs) != len(dirs):
        raise DimensionError("one virtual trajectory per direction is required")
    if coupled is None:
        coupled = coupled_diagnostics(real_traj, virtual_trajs, gt)
    sigma_min = gt.sigma_min
    factor = 4.0 * math.sqrt((op.n1 + op.n2) / op.m)
    rows = []
    skipped = 0
    for k, (d, traj) in enumerate(zip(dirs, virtual_trajs)):
        a_dir = op.apply(d.outer)
        for t, pair in enumerate(traj):
            Z = d.project(gt.Xstar - pair.assemble())
            aZ = op.apply(Z)
            lhs = abs(float(a_dir @ aZ))
            rhs = factor * float(np.linalg.norm(aZ))
            rows.append(AuditRow(t, k, "decoupling", lhs, rhs, lhs > rhs))

            gap = coupled.fro_gap[t, k]
            rows.append(AuditRow(t, k, "closeness", gap, closeness * sigma_min,
                                 gap > closeness * sigma_min))

            pre = (coupled.subspace_misalignment[t] <= 1.0 / 8.0
                   and coupled.spec_err[t] <= sigma_min / 80.0
                   and gap <= sigma_min / 80.0)
            if not pre:
                skipped += 1
                continue
            bound = 1.25 * (coupled.proj_gap_V[t, k] + coupled.proj_gap_W[t, k]) + split_tol
            rows.append(AuditRow(t, k, "projection_split", gap, bound, gap > bound))
    return AuditReport(rows, skipped)
