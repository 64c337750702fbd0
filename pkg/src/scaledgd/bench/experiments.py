"""Experiment runners: convergence traces, kappa sweeps, phase diagrams, audits.

Every task draws its ground truth and operator from seeds derived from the
master seed (see :mod:`.seeds`); the labels used are listed in each output
manifest, so any single cell can be re-run in isolation.  Work is spread over
a thread pool and merged by key, which makes the output independent of the
schedule.
"""

import csv
import hashlib
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from ..errors import ConfigError, ScaledGDError
from ..model import generate_ground_truth
from ..sensing import SensingOperator, rip_probe
from ..solvers import TRACE_COLUMNS, SolverConfig, envelope_violations, run
from ..virtualseq import (
    coupled_diagnostics,
    decoupling_audit,
    horizon_T,
    real_trajectory,
    run_virtual,
    sample_directions,
)
from .config import CONVERGENCE, KAPPA_SWEEP, PHASE_DIAGRAM, RIP_PROBE, VIRTUAL_AUDIT
from .seeds import derive_seed

__all__ = [
    "CellResult",
    "ConvergenceResult",
    "KappaSweepResult",
    "PhaseDiagramResult",
    "VirtualAuditResult",
    "RipProbeResult",
    "run_convergence",
    "run_kappa_sweep",
    "run_phase_diagram",
    "run_virtual_audit",
    "run_rip_probe",
    "run_experiment",
    "error_at_time",
    "phase_boundary",
    "boundary_fit",
    "column_inversions",
    "pgm_bytes",
    "read_pgm",
    "git_blob_hash",
]


# -- small utilities -----------------------------------------------------------------


def git_blob_hash(data):
    """SHA-1 of ``b"blob <len>\\0" + data``, as ``git hash-object`` computes it."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


def _f(value):
    return "" if value is None or (isinstance(value, float) and math.isnan(value)) else repr(float(value))


def _csv_text(header, rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def _map(fn, tasks, threads):
    """``{key: fn(*args)}`` over ``tasks = [(key, args), ...]``."""
    if threads <= 1 or len(tasks) <= 1:
        return {key: fn(*args) for key, args in tasks}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {key: pool.submit(fn, *args) for key, args in tasks}
        return {key: fut.result() for key, fut in futures.items()}


def _median(values):
    return float(np.median(values)) if values else None


def _single(spec, name):
    values = getattr(spec, name)
    if len(values) != 1:
        raise ConfigError(f"{name}: {spec.kind} needs exactly one value, got {len(values)}")
    return values[0]


def _check_kind(spec, kind):
    if spec.kind != kind:
        raise ConfigError(f"kind: expected {kind!r}, got {spec.kind!r}")


class _Manifest:
    """Collects everything needed to re-run a cell; rendered as text."""

    def __init__(self, spec):
        self.spec = spec
        self.labels = []
        self.operators = {}
        self.truths = {}
        self.notes = []

    def operator(self, key, op):
        self.operators[key] = op.header().strip().replace("\n", ";")

    def truth(self, key, gt):
        self.truths[key] = gt.to_blob().hex()

    def render(self):
        echo = self.spec.echo()
        lines = ["# experiment manifest", f"content_hash={git_blob_hash(echo)}", "", "[spec]"]
        lines.append(echo.rstrip("\n"))
        lines += ["", "[seed_derivation]",
                  "scheme=blake2b-64 chain over (name, index) labels; see scaledgd.bench.seeds"]
        lines += self.labels
        lines += ["", "[operators]"]
        lines += [f"{key}: {val}" for key, val in sorted(self.operators.items())]
        lines += ["", "[ground_truth]"]
        lines += [f"{key}: {val}" for key, val in sorted(self.truths.items())]
        if self.notes:
            lines += ["", "[notes]"] + self.notes
        return "\n".join(lines) + "\n"


def _write(out, files):
    if out is None:
        return {}
    os.makedirs(out, exist_ok=True)
    paths = {}
    for name, content in files.items():
        path = os.path.join(out, name)
        mode = "wb" if isinstance(content, bytes) else "w"
        with open(path, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(content)
        paths[name] = path
    return paths


def _is_rank_collapse(trace):
    return trace.failed and trace.failure.startswith(("RankCollapseError", "DegenerateInitError"))


@dataclass
class CellResult:
    """Aggregate over the trials of one cell."""

    key: tuple
    success_count: int
    trials: int
    median_iterations: float = None
    median_wall_nanos: float = None

    def __post_init__(self):
        if not 0 <= self.success_count <= self.trials:
            raise ValueError("success_count must lie in [0, trials]")

    @property
    def rate(self):
        return self.success_count / self.trials


# -- convergence ----------------------------------------------------------------------


@dataclass
class ConvergenceResult:
    traces: dict
    gt: object
    op: object
    paths: dict = field(default_factory=dict)

    @property
    def rank_collapse(self):
        return any(_is_rank_collapse(tr) for tr in self.traces.values())


def run_convergence(spec, out=None):
    """One trace per method from a shared ground truth, operator and initialization."""
    _check_kind(spec, CONVERGENCE)
    r, kappa = _single(spec, "ranks"), _single(spec, "kappas")
    man = _Manifest(spec)
    gt_seed = derive_seed(spec.seed, [("convergence", 0), ("truth", 0)])
    op_seed = derive_seed(spec.seed, [("convergence", 0), ("operator", 0)])
    man.labels += ["truth=[(convergence,0),(truth,0)]", "operator=[(convergence,0),(operator,0)]"]
    gt = generate_ground_truth(spec.n1, spec.n2, r, kappa, gt_seed)
    op = SensingOperator.gaussian(spec.n1, spec.n2, spec.measurements(r), op_seed, spec.backend)
    man.truth("truth", gt)
    man.operator("operator", op)
    y = op.apply(gt.Xstar)

    def one(method):
        cfg = SolverConfig(method=method, mu=spec.mu, max_iters=spec.max_iters,
                           stop_tol=spec.threshold, record_dist=spec.record_dist)
        return run(gt, op, cfg, y=y)

    traces = _map(one, [(meth, (meth,)) for meth in spec.methods], spec.threads)
    files = {}
    combined = []
    for meth in spec.methods:
        tr = traces[meth]
        files[f"{meth}.csv"] = tr.to_csv(timing=spec.timing)
        for rec in tr.records:
            combined.append([meth, rec.iter, _f(rec.fro_rel), _f(rec.spec_abs), _f(rec.dist_val),
                             _f(rec.contraction_ratio), rec.wall_nanos if spec.timing else ""])
        if tr.failed:
            man.notes.append(f"{meth}: failure at iteration {tr.failure_iteration}: {tr.failure}")
    files["convergence.csv"] = _csv_text(("method",) + TRACE_COLUMNS, combined)
    files["manifest.txt"] = man.render()
    return ConvergenceResult(traces, gt, op, _write(out, files))


def error_at_time(trace, wall_nanos):
    """Relative Frobenius error of the last record reached within ``wall_nanos``."""
    best = trace.records[0].fro_rel
    for rec in trace.records:
        if rec.wall_nanos > wall_nanos:
            break
        best = rec.fro_rel
    return best


# -- kappa sweep --------------------------------------------------------------------------


@dataclass
class KappaSweepResult:
    rows: list
    cells: dict
    paths: dict = field(default_factory=dict)
    rank_collapse: bool = False

    def iterations(self, method, kappa):
        """Median iterations to threshold for (method, kappa)."""
        return self.cells[(method, float(kappa))].median_iterations


def run_kappa_sweep(spec, out=None):
    """Iterations and time to ``threshold`` for each method and condition number.

    The operator of trial ``k`` is shared across all condition numbers and
    methods; the ground truth depends on (kappa, trial).  ``m`` is the same for
    every kappa.
    """
    _check_kind(spec, KAPPA_SWEEP)
    r = _single(spec, "ranks")
    m = spec.measurements(r)
    man = _Manifest(spec)
    man.labels += ["operator=[(kappa_sweep,0),(trial,k),(operator,0)]",
                   "truth=[(kappa_sweep,0),(kappa,j),(trial,k),(truth,0)] with j the kappa index"]
    man.notes.append(f"m={m} is applied uniformly across every kappa")

    ops = {}
    for k in range(spec.trials):
        seed = derive_seed(spec.seed, [("kappa_sweep", 0), ("trial", k), ("operator", 0)])
        ops[k] = SensingOperator.gaussian(spec.n1, spec.n2, m, seed, spec.backend)
        man.operator(f"trial={k}", ops[k])

    def one(j, kappa, k):
        seed = derive_seed(spec.seed, [("kappa_sweep", 0), ("kappa", j), ("trial", k), ("truth", 0)])
        gt = generate_ground_truth(spec.n1, spec.n2, r, kappa, seed)
        y = ops[k].apply(gt.Xstar)
        res = {}
        for meth in spec.methods:
            cfg = SolverConfig(method=meth, mu=spec.mu, max_iters=spec.max_iters,
                               stop_tol=spec.threshold, record_spectral=False)
            res[meth] = run(gt, ops[k], cfg, y=y)
        return gt, res

    tasks = [((j, k), (j, kappa, k)) for j, kappa in enumerate(spec.kappas) for k in range(spec.trials)]
    results = _map(one, tasks, spec.threads)

    rows, cells = [], {}
    collapse = False
    for meth in spec.methods:
        for j, kappa in enumerate(spec.kappas):
            its, walls, ok = [], [], 0
            for k in range(spec.trials):
                gt, res = results[(j, k)]
                man.truth(f"kappa={kappa!r},trial={k}", gt)
                tr = res[meth]
                collapse |= _is_rank_collapse(tr)
                n_it = tr.iterations_to(spec.threshold)
                succeeded = n_it is not None and not tr.failed
                wall = tr.records[-1].wall_nanos
                rows.append([meth, repr(float(kappa)), k, "" if n_it is None else n_it,
                             wall if spec.timing else "", int(succeeded)])
                if succeeded:
                    ok += 1
                    its.append(n_it)
                    walls.append(wall)
            cells[(meth, float(kappa))] = CellResult(
                (meth, float(kappa)), ok, spec.trials, _median(its),
                _median(walls) if spec.timing else None)

    files = {
        "kappa_sweep.csv": _csv_text(
            ("method", "kappa", "trial", "iterations_to_threshold", "wall_nanos", "succeeded"), rows),
        "kappa_cells.csv": _csv_text(
            ("method", "kappa", "success_count", "trials", "median_iterations", "median_wall_nanos"),
            [[c.key[0], repr(c.key[1]), c.success_count, c.trials, _f(c.median_iterations),
              _f(c.median_wall_nanos)] for c in cells.values()]),
        "manifest.txt": man.render(),
    }
    return KappaSweepResult(rows, cells, _write(out, files), collapse)


# -- phase diagram -------------------------------------------------------------------------


@dataclass
class PhaseDiagramResult:
    cells: dict
    ranks: tuple
    ms: tuple
    trials: int
    image: bytes
    paths: dict = field(default_factory=dict)

    def success_grid(self):
        """Success counts with rows indexed by m (ascending) and columns by r."""
        return np.array([[self.cells[(r, m)].success_count for r in self.ranks] for m in self.ms])


def pgm_bytes(grid):
    """Binary P5 image of an integer grid with values in [0, 255]."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.min() < 0 or grid.max() > 255:
        raise ValueError("expected a 2-D grid with values in [0, 255]")
    h, w = grid.shape
    return b"P5\n%d %d\n255\n" % (w, h) + grid.astype(np.uint8).tobytes()


def read_pgm(data):
    """Inverse of :func:`pgm_bytes`."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError("not an 8-bit binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def _pixels(cells, ranks, ms, trials):
    grid = np.empty((len(ms), len(ranks)), dtype=int)
    for i, m in enumerate(reversed(ms)):
        for j, r in enumerate(ranks):
            grid[i, j] = int(math.floor(255 * cells[(r, m)].success_count / trials + 0.5))
    return grid


def run_phase_diagram(spec, out=None):
    """Success counts over the (r, m) grid.

    A trial succeeds when ``fro_rel <= threshold`` after ``max_iters``
    iterations of ScaledGD; runs that fail numerically count as failures.
    The operator of (m, trial) is shared by all ranks.
    """
    _check_kind(spec, PHASE_DIAGRAM)
    kappa = _single(spec, "kappas")
    method = _single(spec, "methods")
    man = _Manifest(spec)
    man.labels += ["operator=[(phase_diagram,0),(m,m),(trial,k),(operator,0)]",
                   "truth=[(phase_diagram,0),(rank,r),(m,m),(trial,k),(truth,0)]"]
    cfg = SolverConfig(method=method, mu=spec.mu, max_iters=spec.max_iters, stop_tol=0.0,
                       record_spectral=False)

    def one(m, k):
        op_seed = derive_seed(spec.seed, [("phase_diagram", 0), ("m", m), ("trial", k), ("operator", 0)])
        op = SensingOperator.gaussian(spec.n1, spec.n2, m, op_seed, spec.backend)
        out = {"op": op.header().strip().replace("\n", ";")}
        for r in spec.ranks:
            gt_seed = derive_seed(spec.seed, [("phase_diagram", 0), ("rank", r), ("m", m),
                                              ("trial", k), ("truth", 0)])
            gt = generate_ground_truth(spec.n1, spec.n2, r, kappa, gt_seed)
            try:
                tr = run(gt, op, cfg)
            except ScaledGDError:
                out[r] = (False, None, None, gt)
                continue
            final = tr.records[-1]
            ok = (not tr.failed) and final.iter == spec.max_iters and final.fro_rel <= spec.threshold
            out[r] = (ok, tr.iterations_to(spec.threshold), final.wall_nanos, gt)
        return out

    tasks = [((m, k), (m, k)) for m in spec.ms for k in range(spec.trials)]
    results = _map(one, tasks, spec.threads)

    cells, rows = {}, []
    for m in spec.ms:
        for k in range(spec.trials):
            man.operators[f"m={m},trial={k}"] = results[(m, k)]["op"]
    for r in spec.ranks:
        for m in spec.ms:
            its, walls, ok = [], [], 0
            for k in range(spec.trials):
                success, n_it, wall, gt = results[(m, k)][r]
                man.truth(f"r={r},m={m},trial={k}", gt)
                if success:
                    ok += 1
                    its.append(n_it)
                    walls.append(wall)
            cell = CellResult((r, m), ok, spec.trials, _median(its),
                              _median(walls) if spec.timing else None)
            cells[(r, m)] = cell
            rows.append([r, m, cell.success_count, cell.trials, _f(cell.median_iterations),
                         _f(cell.median_wall_nanos)])

    image = pgm_bytes(_pixels(cells, spec.ranks, spec.ms, spec.trials))
    files = {
        "phase_diagram.csv": _csv_text(
            ("r", "m", "success_count", "trials", "median_iterations", "median_wall_nanos"), rows),
        "phase_diagram.pgm": image,
        "manifest.txt": man.render(),
    }
    return PhaseDiagramResult(cells, tuple(spec.ranks), tuple(spec.ms), spec.trials, image,
                              _write(out, files))


def phase_boundary(result, level=0.8):
    """``{r: smallest m with success rate >= level}`` (None when never reached)."""
    bound = {}
    for r in result.ranks:
        bound[r] = next((m for m in result.ms if result.cells[(r, m)].rate >= level), None)
    return bound


def boundary_fit(boundary):
    """Least-squares line ``m = a r + b`` through the defined boundary points.

    Returns ``(slope, intercept, r_squared, n_points)``; fewer than three
    points give NaN coefficients.
    """
    pts = [(r, m) for r, m in sorted(boundary.items()) if m is not None]
    if len(pts) < 3:
        return float("nan"), float("nan"), float("nan"), len(pts)
    rs, ms = np.array(pts, dtype=float).T
    if np.ptp(ms) == 0:
        return 0.0, float(ms[0]), float("nan"), len(pts)
    fit = scipy.stats.linregress(rs, ms)
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2), len(pts)


def column_inversions(result):
    """Per rank, the number of adjacent m pairs where the success count drops."""
    grid = result.success_grid()
    return {r: int(np.sum(np.diff(grid[:, j]) < 0)) for j, r in enumerate(result.ranks)}


# -- virtual audit --------------------------------------------------------------------------


@dataclass
class VirtualAuditResult:
    coupled: object
    report: object
    T: int
    G_envelope_violations: list
    closeness_level: float
    paths: dict = field(default_factory=dict)

    @property
    def violated(self):
        return bool(self.report.violations or self.G_envelope_violations)

    def summary(self):
        return (f"{self.report.summary()} G_envelope_violations={len(self.G_envelope_violations)} "
                f"T={self.T}")


def run_virtual_audit(spec, out=None, closeness=0.1):
    """Real and virtual ScaledGD trajectories, their coupled gaps and the audit."""
    _check_kind(spec, VIRTUAL_AUDIT)
    r, kappa = _single(spec, "ranks"), _single(spec, "kappas")
    m = spec.measurements(r)
    man = _Manifest(spec)
    labels = {name: [("virtual_audit", 0), (name, 0)] for name in ("truth", "operator", "directions")}
    man.labels += [f"{name}=[(virtual_audit,0),({name},0)]" for name in labels]
    gt = generate_ground_truth(spec.n1, spec.n2, r, kappa, derive_seed(spec.seed, labels["truth"]))
    op = SensingOperator.gaussian(spec.n1, spec.n2, m, derive_seed(spec.seed, labels["operator"]),
                                  spec.backend)
    dirs = sample_directions(spec.n1, spec.n2, spec.directions,
                             derive_seed(spec.seed, labels["directions"]))
    man.truth("truth", gt)
    man.operator("operator", op)
    T = spec.horizon or horizon_T(spec.mu, r)
    man.notes.append(f"T={T}" + ("" if spec.horizon else " from ceil((10/mu) ln(10 sqrt(r))), natural log"))
    man.notes.append(f"driver={spec.driver}")

    y = op.apply(gt.Xstar)
    real = real_trajectory(gt, op, spec.mu, T, y=y)
    virt = _map(lambda d: run_virtual(gt, op, d, spec.mu, T, y=y, driver=spec.driver),
                [(k, (d,)) for k, d in enumerate(dirs)], spec.threads)
    virtual_trajs = [virt[k] for k in range(len(dirs))]
    coupled = coupled_diagnostics(real, virtual_trajs, gt)
    report = decoupling_audit(real, virtual_trajs, op, dirs, gt, coupled=coupled, closeness=closeness)
    env = envelope_violations(coupled.G, spec.mu / 10.0)
    result = VirtualAuditResult(coupled, report, T, env, closeness)
    files = {
        "coupled_trace.csv": coupled.to_csv(),
        "audit.csv": report.to_csv(),
        "audit_summary.txt": result.summary() + "\n",
        "manifest.txt": man.render(),
    }
    result.paths = _write(out, files)
    return result


# -- RIP probe -----------------------------------------------------------------------------------


@dataclass
class RipProbeResult:
    curves: dict
    paths: dict = field(default_factory=dict)

    def estimate(self, r):
        return float(self.curves[r][-1])


def run_rip_probe(spec, out=None):
    """Running-max RIP estimate per rank on one seeded Gaussian operator per rank."""
    _check_kind(spec, RIP_PROBE)
    man = _Manifest(spec)
    man.labels += ["operator=[(rip_probe,0),(rank,r),(operator,0)]",
                   "probe=[(rip_probe,0),(rank,r),(probe,0)]"]
    curves, rows, summary = {}, [], []
    for r in spec.ranks:
        op = SensingOperator.gaussian(
            spec.n1, spec.n2, spec.measurements(r),
            derive_seed(spec.seed, [("rip_probe", 0), ("rank", r), ("operator", 0)]), spec.backend)
        man.operator(f"r={r}", op)
        curve = rip_probe(op, r, spec.rip_trials,
                          derive_seed(spec.seed, [("rip_probe", 0), ("rank", r), ("probe", 0)]))
        curves[r] = curve
        rows += [[r, k + 1, repr(float(v))] for k, v in enumerate(curve)]
        summary.append(f"r={r} m={op.m} estimate={float(curve[-1])!r}")
    files = {
        "rip_probe.csv": _csv_text(("r", "trials", "running_max"), rows),
        "rip_summary.txt": "\n".join(summary) + "\n",
        "manifest.txt": man.render(),
    }
    return RipProbeResult(curves, _write(out, files))


_RUNNERS = {
    CONVERGENCE: run_convergence,
    KAPPA_SWEEP: run_kappa_sweep,
    PHASE_DIAGRAM: run_phase_diagram,
    VIRTUAL_AUDIT: run_virtual_audit,
    RIP_PROBE: run_rip_probe,
}


def run_experiment(spec, out=None):
    return _RUNNERS[spec.kind](spec, out)
