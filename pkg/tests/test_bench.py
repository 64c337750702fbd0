import os
import subprocess

import numpy as np
import pytest

from scaledgd.bench import (
    CellResult,
    ExperimentSpec,
    boundary_fit,
    column_inversions,
    derive_seed,
    error_at_time,
    git_blob_hash,
    parse_config,
    pgm_bytes,
    phase_boundary,
    preset,
    read_pgm,
    run_convergence,
    run_kappa_sweep,
    run_phase_diagram,
    run_rip_probe,
    run_virtual_audit,
)
from scaledgd.bench.experiments import PhaseDiagramResult
from scaledgd.errors import ConfigError, DomainError


class TestSeeds:
    def test_deterministic(self):
        labels = [("phase_diagram", 0), ("trial", 3)]
        assert derive_seed(7, labels) == derive_seed(7, labels)
        assert 0 <= derive_seed(7, labels) < 2**64

    def test_order_sensitive(self):
        assert derive_seed(1, [("a", 1), ("b", 2)]) != derive_seed(1, [("b", 2), ("a", 1)])

    def test_master_and_name_matter(self):
        assert derive_seed(1, [("a", 0)]) != derive_seed(2, [("a", 0)])
        assert derive_seed(1, [("a", 0)]) != derive_seed(1, [("b", 0)])

    def test_no_collisions_over_trial_indices(self):
        seeds = {derive_seed(12345, [("cell", 0), ("trial", k)]) for k in range(100_000)}
        assert len(seeds) == 100_000

    def test_errors(self):
        with pytest.raises(DomainError):
            derive_seed(0, [])
        with pytest.raises(DomainError):
            derive_seed(0, [("trial", -1)])


class TestConfig:
    def test_parse_ranges_and_expressions(self):
        spec = parse_config("""
            # phase grid
            kind = phase_diagram
            n1 = 40
            n2 = 44
            r = 1..10
            ms = 400..4000:400
            kappa = 5
            trials = 5
        """)
        assert spec.ranks == tuple(range(1, 11))
        assert spec.ms == tuple(range(400, 4001, 400))
        assert spec.kappas == (5.0,)

    def test_measurement_expression(self):
        spec = ExperimentSpec(kind="virtual_audit", n1=32, n2=32, ranks=(3,), m="5*(n1+n2)*r")
        assert spec.measurements(3) == 960
        assert preset("desk-exp1").measurements(8) == 1920

    def test_echo_round_trip(self):
        for name in ("desk-exp1", "desk-exp2", "desk-exp3", "desk-audit", "desk-rip"):
            spec = preset(name, seed=9, timing=False)
            assert parse_config(spec.echo()) == spec

    @pytest.mark.parametrize("text,field", [
        ("kind=convergence\nmethods=", "methods"),
        ("kind=convergence\nmethods=adam", "methods"),
        ("kind=convergence\nthreshold=0", "threshold"),
        ("kind=convergence\ntrials=0", "trials"),
        ("kind=convergence\nr=5,3", "ranks"),
        ("kind=phase_diagram\nn1=10\nn2=10\nr=1\nms=", "ms"),
        ("kind=kappa_sweep\nkappa=0.5", "kappas"),
        ("kind=convergence\nm=__import__('os')", "m"),
        ("kind=convergence\nbogus=1", "bogus"),
        ("kind=convergence\nn1=ten", "n1"),
        ("n1=3", "kind"),
        ("kind=nonsense", "kind"),
    ])
    def test_validation_names_field(self, text, field):
        with pytest.raises(ConfigError, match=field):
            parse_config(text)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("nope")


def tiny(kind, **kw):
    base = dict(kind=kind, n1=10, n2=9, ranks=(2,), m="6*(n1+n2)*r", kappas=(2.0,), max_iters=40,
                timing=False)
    base.update(kw)
    return ExperimentSpec(**base)


class TestConvergence:
    def test_init_row_only(self, tmp_path):
        res = run_convergence(tiny("convergence", max_iters=0), out=tmp_path)
        lines = (tmp_path / "scaledgd.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].startswith("0,")
        assert (tmp_path / "manifest.txt").exists()
        assert len(res.traces["scaledgd"]) == 1

    def test_combined_csv(self, tmp_path):
        spec = tiny("convergence", methods=("scaledgd", "vanillagd", "rgd"), max_iters=5)
        run_convergence(spec, out=tmp_path)
        combined = (tmp_path / "convergence.csv").read_text().splitlines()
        assert combined[0] == "method,iter,fro_rel,spec_abs,dist,contraction_ratio,wall_nanos"
        assert len(combined) == 1 + 3 * 6
        for meth in spec.methods:
            body = (tmp_path / f"{meth}.csv").read_text().splitlines()[1:]
            rows = [ln.split(",", 1)[1] for ln in combined[1:] if ln.startswith(meth + ",")]
            assert rows == body

    def test_needs_single_rank(self):
        with pytest.raises(ConfigError, match="ranks"):
            run_convergence(tiny("convergence", ranks=(1, 2)))

    def test_wrong_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            run_convergence(tiny("kappa_sweep"))

    def test_error_at_time(self):
        res = run_convergence(tiny("convergence", timing=True, max_iters=3))
        tr = res.traces["scaledgd"]
        assert error_at_time(tr, 0) == tr.records[0].fro_rel
        assert error_at_time(tr, 10**18) == tr.records[-1].fro_rel

    @pytest.mark.slow
    def test_full_scale_ordering(self):
        spec = preset("paper-exp1", max_iters=40, threads=3)
        res = run_convergence(spec)
        sgd, gd = res.traces["scaledgd"], res.traces["vanillagd"]
        assert len(res.traces) == 3
        budget = sgd.records[-1].wall_nanos
        assert sgd.records[-1].fro_rel < error_at_time(gd, budget)


class TestKappaSweep:
    def test_kappa_one_all_methods_succeed(self, tmp_path):
        spec = preset("desk-exp2", kappas=(1.0,), max_iters=1000, timing=False)
        res = run_kappa_sweep(spec, out=tmp_path)
        assert all(cell.success_count == 1 for cell in res.cells.values())
        lines = (tmp_path / "kappa_sweep.csv").read_text().splitlines()
        assert lines[0] == "method,kappa,trial,iterations_to_threshold,wall_nanos,succeeded"
        assert len(lines) == 4
        assert "applied uniformly" in (tmp_path / "manifest.txt").read_text()

    def test_failure_is_reported(self):
        res = run_kappa_sweep(tiny("kappa_sweep", methods=("vanillagd",), kappas=(50.0,), max_iters=5,
                                   threshold=1e-12))
        cell = next(iter(res.cells.values()))
        assert cell.success_count == 0 and cell.median_iterations is None
        assert res.rows[0][3] == "" and res.rows[0][5] == 0


class TestPhaseDiagram:
    def cell(self, m, r=1):
        return ExperimentSpec(kind="phase_diagram", n1=12, n2=12, ranks=(r,), ms=(m,), kappas=(5.0,),
                              trials=5, max_iters=100, threshold=1e-8, timing=False)

    def test_easy_cell_is_white(self):
        assert read_pgm(run_phase_diagram(self.cell(144)).image).tolist() == [[255]]

    def test_hopeless_cell_is_black(self):
        assert read_pgm(run_phase_diagram(self.cell(1)).image).tolist() == [[0]]
        assert read_pgm(run_phase_diagram(self.cell(2, r=2)).image).tolist() == [[0]]

    def test_schedule_independent_bytes(self, tmp_path):
        spec = ExperimentSpec(kind="phase_diagram", n1=8, n2=9, ranks=(1, 2), ms=(40, 120),
                              kappas=(3.0,), trials=2, max_iters=30, threshold=1e-4, timing=False)
        run_phase_diagram(spec, out=tmp_path / "a")
        run_phase_diagram(spec.with_overrides(threads=4), out=tmp_path / "b")
        for name in ("phase_diagram.csv", "phase_diagram.pgm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        csv_lines = (tmp_path / "a" / "phase_diagram.csv").read_text().splitlines()
        assert csv_lines[0] == "r,m,success_count,trials,median_iterations,median_wall_nanos"
        assert len(csv_lines) == 5

    def test_pixel_layout(self):
        cells = {(r, m): CellResult((r, m), s, 4) for (r, m), s in
                 {(1, 10): 1, (2, 10): 0, (1, 20): 4, (2, 20): 2}.items()}
        from scaledgd.bench.experiments import _pixels
        grid = _pixels(cells, (1, 2), (10, 20), 4)
        # first row is the largest m; pixel = round(255 s / trials)
        assert grid.tolist() == [[255, 128], [64, 0]]

    def test_pgm_round_trip(self):
        grid = np.array([[0, 128, 255], [1, 2, 3]])
        data = pgm_bytes(grid)
        assert data.startswith(b"P5\n3 2\n255\n")
        assert read_pgm(data).tolist() == grid.tolist()
        with pytest.raises(ValueError):
            pgm_bytes(np.array([[256]]))

    def test_boundary_helpers(self):
        ranks, ms = (1, 2, 3, 4), (100, 200, 300, 400, 500)
        cells = {}
        for r in ranks:
            for m in ms:
                cells[(r, m)] = CellResult((r, m), 5 if m >= 100 * (r + 1) else 0, 5)
        cells[(1, 300)] = CellResult((1, 300), 3, 5)  # one inversion in column 1
        res = PhaseDiagramResult(cells, ranks, ms, 5, b"")
        bound = phase_boundary(res)
        assert bound == {1: 200, 2: 300, 3: 400, 4: 500}
        slope, icpt, r2, n = boundary_fit(bound)
        assert (slope, icpt, n) == pytest.approx((100.0, 100.0, 4))
        assert r2 == pytest.approx(1.0)
        assert column_inversions(res) == {1: 1, 2: 0, 3: 0, 4: 0}

    def test_cell_result_invariant(self):
        with pytest.raises(ValueError):
            CellResult((1, 1), 6, 5)


class TestVirtualAudit:
    def test_minimal_shape(self):
        spec = ExperimentSpec(kind="virtual_audit", n1=6, n2=6, ranks=(1,), m="10*(n1+n2)*r",
                              directions=1, horizon=1)
        res = run_virtual_audit(spec)
        assert len(res.coupled.to_csv().splitlines()) == 1 + 4

    def test_deterministic_outputs(self, tmp_path):
        spec = preset("desk-audit", n1=10, n2=10, directions=3, seed=21, timing=False)
        run_virtual_audit(spec, out=tmp_path / "a")
        run_virtual_audit(spec.with_overrides(threads=3), out=tmp_path / "b")
        for name in ("coupled_trace.csv", "audit.csv", "audit_summary.txt", "manifest.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_desk_config_has_no_decoupling_violations(self):
        res = run_virtual_audit(preset("desk-audit", seed=21))
        assert res.report.count("decoupling", violated_only=True) == 0
        assert res.T == 58


class TestRipProbeRunner:
    def test_estimate_and_csv(self, tmp_path):
        res = run_rip_probe(preset("desk-rip", rip_trials=40), out=tmp_path)
        est = res.estimate(2)
        assert 0 < est < 1
        lines = (tmp_path / "rip_probe.csv").read_text().splitlines()
        assert lines[0] == "r,trials,running_max" and len(lines) == 41


class TestManifest:
    def test_git_blob_hash_matches_git(self):
        data = b"kind=convergence\nn1=3\n"
        out = subprocess.run(["git", "hash-object", "--stdin"], input=data, capture_output=True)
        if out.returncode != 0:
            pytest.skip("git unavailable")
        assert git_blob_hash(data) == out.stdout.decode().strip()

    def test_manifest_reruns_a_cell(self, tmp_path):
        spec = tiny("convergence", max_iters=3, seed=77)
        res = run_convergence(spec, out=tmp_path)
        text = (tmp_path / "manifest.txt").read_text()
        assert f"content_hash={git_blob_hash(spec.echo())}" in text
        # the spec block alone reproduces the run
        block = text.split("[spec]\n", 1)[1].split("\n\n", 1)[0]
        again = run_convergence(parse_config(block))
        assert again.traces["scaledgd"].to_csv(timing=False) == res.traces["scaledgd"].to_csv(timing=False)
        assert "seed=" in text and "backend=" in text
        assert os.path.basename(res.paths["manifest.txt"]) == "manifest.txt"
