"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (rank
collapse or degenerate initialization), 4 audit violation.
"""

import argparse
import sys

from ..errors import ConfigError
from ..solvers import THEOREM_MAX_STEP
from .config import (
    CONVERGENCE,
    KAPPA_SWEEP,
    PHASE_DIAGRAM,
    PRESETS,
    RIP_PROBE,
    VIRTUAL_AUDIT,
    ExperimentSpec,
    parse_assignments,
)
from .experiments import boundary_fit, phase_boundary, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_AUDIT = 4

COMMANDS = {
    "converge": CONVERGENCE,
    "kappa-sweep": KAPPA_SWEEP,
    "phase-diagram": PHASE_DIAGRAM,
    "virtual-audit": VIRTUAL_AUDIT,
    "rip-probe": RIP_PROBE,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="scaledgd-bench", description="Low-rank matrix sensing experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="line-oriented key=value file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--no-timing", action="store_true", help="blank all timing columns")
        p.add_argument("--backend", choices=("auto", "materialized", "streamed"))
        p.add_argument("--theorem-regime", action="store_true",
                       help=f"use the theorem's step size mu={THEOREM_MAX_STEP}")
    return parser


def spec_from_args(args):
    kind = COMMANDS[args.command]
    values = dict(PRESETS[args.preset]) if args.preset else {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = parse_assignments(fh.read().splitlines(), values)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config!r} ({exc})") from exc
    values = parse_assignments(args.set, values)
    if values.get("kind", kind) != kind:
        raise ConfigError(f"kind: {values['kind']!r} does not match subcommand {args.command!r}")
    values["kind"] = kind
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")
        values["seed"] = args.seed
    if args.threads is not None:
        values["threads"] = args.threads
    if args.backend is not None:
        values["backend"] = args.backend
    if args.no_timing:
        values["timing"] = False
    if args.theorem_regime:
        values["mu"] = THEOREM_MAX_STEP
    return ExperimentSpec(**values)


def _report(spec, result):
    if spec.kind == CONVERGENCE:
        for meth, tr in result.traces.items():
            tail = f" failed: {tr.failure}" if tr.failed else ""
            print(f"{meth}: iterations={tr.records[-1].iter} fro_rel={tr.records[-1].fro_rel:.3e}{tail}")
        return EXIT_NUMERICAL if result.rank_collapse else EXIT_OK
    if spec.kind == KAPPA_SWEEP:
        for (meth, kappa), cell in result.cells.items():
            print(f"{meth} kappa={kappa:g}: success={cell.success_count}/{cell.trials} "
                  f"median_iterations={cell.median_iterations}")
        return EXIT_NUMERICAL if result.rank_collapse else EXIT_OK
    if spec.kind == PHASE_DIAGRAM:
        slope, icpt, r2, npts = boundary_fit(phase_boundary(result))
        print(f"boundary fit: m = {slope:.1f} r + {icpt:.1f} (R^2={r2:.3f}, {npts} points)")
        return EXIT_OK
    if spec.kind == VIRTUAL_AUDIT:
        print(result.summary())
        return EXIT_AUDIT if result.violated else EXIT_OK
    for r in result.curves:
        print(f"r={r}: estimate={result.estimate(r):.4f}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = spec_from_args(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_experiment(spec, args.out)
    return _report(spec, result)


if __name__ == "__main__":
    sys.exit(main())
