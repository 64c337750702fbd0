import io

import numpy as np
import pytest

from scaledgd.errors import DegenerateInitError, DimensionError, DomainError, RankCollapseError
from scaledgd.model import FactorPair, generate_ground_truth
from scaledgd.sensing import SensingOperator, orthonormal_basis_operator
from scaledgd.solvers import (
    COST_CLASSES,
    METHODS,
    RGD,
    SCALEDGD,
    TRACE_COLUMNS,
    VANILLAGD,
    IterateTrace,
    SolverConfig,
    TraceRecord,
    balanced_factors,
    contraction_monitor,
    envelope_violations,
    rgd_step,
    run,
    scaledgd_step,
    spectral_init,
    tangent_project,
    vanillagd_step,
)


def scalar_scaledgd(l, r, xstar, c, mu, steps):
    """1 x 1 rank-one ScaledGD with A*A = c (closed-form recursion)."""
    out = []
    for _ in range(steps):
        g = c * (xstar - l * r)
        l, r = l + mu * g / r, r + mu * g / l
        out.append((l, r))
    return out


class TestSteps:
    def test_scalar_recursion(self):
        a = np.array([0.3, -1.2, 2.0])
        op = SensingOperator.from_matrices(a.reshape(3, 1, 1))
        c = float(a @ a) / 3
        y = op.apply(np.array([[1.7]]))
        p = FactorPair(np.array([[0.5]]), np.array([[2.0]]))
        for l_ref, r_ref in scalar_scaledgd(0.5, 2.0, 1.7, c, 0.5, 6):
            p = scaledgd_step(p, op, y, 0.5)
            assert p.L[0, 0] == pytest.approx(l_ref, rel=1e-13)
            assert p.R[0, 0] == pytest.approx(r_ref, rel=1e-13)

    def test_vanilla_matches_formula(self, small_problem, rng):
        gt, op = small_problem
        y = op.apply(gt.Xstar)
        p = FactorPair(rng.standard_normal((12, 2)), rng.standard_normal((10, 2)))
        G = op.adjoint(y - op.apply(p.L @ p.R.T))
        q = vanillagd_step(p, op, y, 0.1)
        np.testing.assert_allclose(q.L, p.L + 0.1 * G @ p.R, rtol=1e-12)
        np.testing.assert_allclose(q.R, p.R + 0.1 * G.T @ p.L, rtol=1e-12)

    def test_rgd_matches_dense_formula(self, small_problem, rng):
        gt, op = small_problem
        y = op.apply(gt.Xstar)
        X = (gt.Lstar + 0.1 * rng.standard_normal((12, 2))) @ (gt.Rstar + 0.1 * rng.standard_normal((10, 2))).T
        U, S, Vt = np.linalg.svd(X)
        U, V = U[:, :2], Vt[:2].T
        G = op.adjoint(y - op.apply(X))
        Z = X + 0.5 * tangent_project(G, U, V)
        u, s, vt = np.linalg.svd(Z)
        expected = (u[:, :2] * s[:2]) @ vt[:2]
        np.testing.assert_allclose(rgd_step(X, op, y, 0.5, 2), expected, atol=1e-12)

    def test_tangent_projection_idempotent(self, rng):
        U, _ = np.linalg.qr(rng.standard_normal((7, 2)))
        V, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        G = rng.standard_normal((7, 5))
        P = tangent_project(G, U, V)
        np.testing.assert_allclose(tangent_project(P, U, V), P, atol=1e-13)

    def test_fixed_point(self, small_problem):
        gt, op = small_problem
        y = op.apply(gt.Xstar)
        p = FactorPair(gt.Lstar, gt.Rstar)
        for step in (scaledgd_step, vanillagd_step):
            np.testing.assert_allclose(step(p, op, y, 0.5).assemble(), gt.Xstar, atol=1e-10)
        np.testing.assert_allclose(rgd_step(gt.Xstar, op, y, 0.5, 2), gt.Xstar, atol=1e-10)

    def test_equivariance(self, small_problem, rng):
        gt, op = small_problem
        y = op.apply(gt.Xstar)
        p = FactorPair(gt.Lstar + 0.2 * rng.standard_normal((12, 2)),
                       gt.Rstar + 0.2 * rng.standard_normal((10, 2)))
        ref = scaledgd_step(p, op, y, 0.5).assemble()
        for _ in range(10):
            Q = rng.standard_normal((2, 2)) + 2 * np.eye(2)
            out = scaledgd_step(p.reparametrize(Q), op, y, 0.5).assemble()
            assert np.linalg.norm(out - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_isometry_halves_error(self, rng):
        # with A*A = I the linearized step is E -> E - mu (P_U E + E P_V); at
        # mu = 0.5 the in-span part vanishes and the rest is halved
        gt = generate_ground_truth(5, 4, 2, 2.0, seed=1)
        op = orthonormal_basis_operator(5, 4, rng)
        y = op.apply(gt.Xstar)
        p = FactorPair(gt.Lstar + 1e-4 * rng.standard_normal((5, 2)),
                       gt.Rstar + 1e-4 * rng.standard_normal((4, 2)))
        errs = []
        for _ in range(8):
            errs.append(np.linalg.norm(p.assemble() - gt.Xstar))
            p = scaledgd_step(p, op, y, 0.5)
        ratios = np.array(errs[2:]) / np.array(errs[1:-1])
        np.testing.assert_allclose(ratios, 0.5, atol=1e-3)

    def test_collapsed_factor_raises(self, small_problem):
        gt, op = small_problem
        y = op.apply(gt.Xstar)
        L = np.zeros((12, 2))
        L[0, 0] = 1.0
        with pytest.raises(RankCollapseError):
            scaledgd_step(FactorPair(L, gt.Rstar), op, y, 0.5)
        with pytest.raises(RankCollapseError):
            rgd_step(np.outer(np.ones(12), np.ones(10)), op, y, 0.5, 2)


class TestInit:
    def test_balanced(self, small_problem):
        gt, op = small_problem
        rep = spectral_init(op, op.apply(gt.Xstar), 2, gt=gt)
        assert rep.balanced_residual < 1e-12
        assert rep.spec_gap == pytest.approx(np.linalg.norm(rep.pair.assemble() - gt.Xstar, 2))
        np.testing.assert_allclose(rep.pair.L.T @ rep.pair.L, rep.pair.R.T @ rep.pair.R, atol=1e-12)

    def test_degenerate_init(self):
        with pytest.raises(DegenerateInitError):
            balanced_factors(np.diag([1.0, 0.0, 0.0]), 2)

    def test_rank_too_large(self, small_problem):
        gt, op = small_problem
        with pytest.raises(DimensionError):
            spectral_init(op, op.apply(gt.Xstar), 11)


class TestRun:
    def test_zero_iterations(self, small_problem):
        gt, op = small_problem
        tr = run(gt, op, SolverConfig(max_iters=0))
        assert len(tr) == 1 and tr.records[0].iter == 0

    @pytest.mark.parametrize("method", METHODS)
    def test_all_methods_converge(self, small_problem, method):
        gt, op = small_problem
        mu = 0.5
        tr = run(gt, op, SolverConfig(method=method, mu=mu, max_iters=400, stop_tol=1e-9))
        assert not tr.failed
        assert tr.fro_rel[-1] <= 1e-9
        assert tr.iterations_to(1e-9) == tr.records[-1].iter

    def test_stopping_disabled_runs_full(self, small_problem):
        gt, op = small_problem
        tr = run(gt, op, SolverConfig(max_iters=7, stop_tol=0.0))
        assert [rec.iter for rec in tr.records] == list(range(8))

    def test_deterministic(self, small_problem):
        gt, op = small_problem
        cfg = SolverConfig(max_iters=15)
        a = run(gt, op, cfg).to_csv(timing=False)
        b = run(gt, op, cfg).to_csv(timing=False)
        assert a == b

    def test_residual_monotone_after_first_step(self, small_problem):
        gt, op = small_problem
        y = op.apply(gt.Xstar)
        tr = run(gt, op, SolverConfig(max_iters=40), y=y, keep_iterates=True)
        res = [np.linalg.norm(y - op.apply(p.assemble())) for p in tr.iterates]
        assert np.all(np.diff(res[1:]) <= 1e-12)

    def test_dist_and_contraction_columns(self, small_problem):
        gt, op = small_problem
        tr = run(gt, op, SolverConfig(max_iters=5, record_dist=True))
        d = tr.dist
        assert np.all(np.isfinite(d))
        for t in range(5):
            assert tr.records[t].contraction_ratio == pytest.approx(d[t + 1] / d[t])
        assert tr.records[-1].contraction_ratio is None

    def test_csv_format(self, small_problem):
        gt, op = small_problem
        text = run(gt, op, SolverConfig(max_iters=2, record_spectral=False)).to_csv(timing=False)
        lines = text.splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        assert len(lines) == 4
        fields = lines[1].split(",")
        assert fields[2] == "" and fields[3] == "" and fields[5] == ""
        float(fields[1])

    def test_shape_mismatch(self, small_problem):
        gt, _ = small_problem
        with pytest.raises(DimensionError):
            run(gt, SensingOperator.gaussian(5, 5, 10, 0), SolverConfig())

    def test_config_validation(self):
        with pytest.raises(DomainError):
            SolverConfig(method="adam")
        with pytest.raises(DomainError):
            SolverConfig(mu=0.0)
        assert SolverConfig(mu=1 / 32).theorem_regime
        assert not SolverConfig().theorem_regime

    def test_cost_classes_cover_methods(self):
        assert set(COST_CLASSES) == {SCALEDGD, VANILLAGD, RGD}


def synthetic_trace(dists):
    return IterateTrace(SCALEDGD, [TraceRecord(t, 0.0, dist_val=d) for t, d in enumerate(dists)])


class TestMonitors:
    @pytest.fixture
    def gt(self):
        return generate_ground_truth(4, 4, 2, 2.0, seed=0)

    def test_exact_recovery_is_vacuous(self, gt):
        rep = contraction_monitor(synthetic_trace([0.0, 0.0, 0.0]), gt, 0.5)
        assert rep.ok and rep.entry_iter == 0

    def test_geometric_half(self, gt):
        rep = contraction_monitor(synthetic_trace(0.04 * 0.5 ** np.arange(20)), gt, 0.5)
        assert rep.ok and rep.checked == 19

    def test_slow_trace_violates(self, gt):
        rep = contraction_monitor(synthetic_trace(0.04 * 0.9 ** np.arange(10)), gt, 0.5)
        assert len(rep.violations) == 9

    def test_never_enters_basin(self, gt):
        rep = contraction_monitor(synthetic_trace([1.0, 0.9, 0.8]), gt, 0.5)
        assert rep.entry_iter is None and rep.ok

    def test_requires_dist(self, gt):
        with pytest.raises(DomainError):
            contraction_monitor(synthetic_trace([None, None]), gt, 0.5)

    def test_envelope(self):
        vals = [1.0, 0.9, 0.95, 0.5]
        assert envelope_violations(vals, 0.05) == [2]
        assert envelope_violations(vals, 0.05, slack=0.1) == []


def test_dist_stays_under_geometric_envelope():
    # m >= 4 (n1 + n2) r kappa^2: the trace never exceeds (1 - mu/10)^t dist[0]
    gt = generate_ground_truth(10, 8, 2, 2.0, seed=12)
    op = SensingOperator.gaussian(10, 8, 4 * 18 * 2 * 4, seed=13)
    tr = run(gt, op, SolverConfig(max_iters=30, record_dist=True, record_spectral=False))
    assert envelope_violations(tr.dist, 0.05, slack=1e-12) == []
