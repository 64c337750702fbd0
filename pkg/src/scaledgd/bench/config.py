"""Experiment specifications: the key=value config format and shipped presets.

Config files are line oriented.  Blank lines and ``#`` comments are ignored;
every other line is ``key = value``.  Lists are comma separated, integer
ranges are written ``a..b`` or ``a..b:step`` (inclusive).  ``m`` may be an
integer or a product/sum expression over ``n1``, ``n2`` and ``r`` such as
``4*n1*r`` or ``5*(n1+n2)*r``.
"""

import ast
import operator
from dataclasses import dataclass, fields, replace

from ..errors import ConfigError
from ..sensing import MATERIALIZED, STREAMED
from ..solvers import METHODS

__all__ = [
    "CONVERGENCE",
    "KAPPA_SWEEP",
    "PHASE_DIAGRAM",
    "VIRTUAL_AUDIT",
    "RIP_PROBE",
    "KINDS",
    "ExperimentSpec",
    "PRESETS",
    "parse_config",
    "load_config",
    "preset",
]

CONVERGENCE = "convergence"
KAPPA_SWEEP = "kappa_sweep"
PHASE_DIAGRAM = "phase_diagram"
VIRTUAL_AUDIT = "virtual_audit"
RIP_PROBE = "rip_probe"
KINDS = (CONVERGENCE, KAPPA_SWEEP, PHASE_DIAGRAM, VIRTUAL_AUDIT, RIP_PROBE)
BACKENDS = ("auto", MATERIALIZED, STREAMED)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    n1: int = 60
    n2: int = 60
    ranks: tuple = (8,)
    m: str = "4*n1*r"
    ms: tuple = ()
    kappas: tuple = (5.0,)
    methods: tuple = ("scaledgd",)
    mu: float = 0.5
    max_iters: int = 100
    threshold: float = 1e-10
    trials: int = 1
    seed: int = 0
    directions: int = 16
    horizon: int = 0
    driver: str = "real"
    rip_trials: int = 500
    backend: str = "auto"
    timing: bool = True
    threads: int = 1
    record_dist: bool = False

    def __post_init__(self):
        self.validate()

    # -- validation ---------------------------------------------------------------

    def validate(self):
        def bad(field_name, msg):
            raise ConfigError(f"{field_name}: {msg}")

        if self.kind not in KINDS:
            bad("kind", f"must be one of {KINDS}, got {self.kind!r}")
        if self.n1 < 1 or self.n2 < 1:
            bad("n1/n2", "dimensions must be positive")
        if not self.ranks:
            bad("ranks", "must be non-empty")
        if list(self.ranks) != sorted(self.ranks) or len(set(self.ranks)) != len(self.ranks):
            bad("ranks", "must be strictly increasing")
        if self.ranks[0] < 1 or self.ranks[-1] > min(self.n1, self.n2):
            bad("ranks", f"must lie in [1, {min(self.n1, self.n2)}]")
        if self.kind == PHASE_DIAGRAM:
            if not self.ms:
                bad("ms", "phase diagram needs a non-empty m range")
            if list(self.ms) != sorted(self.ms) or len(set(self.ms)) != len(self.ms):
                bad("ms", "must be strictly increasing")
            if self.ms[0] < 1:
                bad("ms", "measurement counts must be positive")
        else:
            for r in self.ranks:
                if self.measurements(r) < 1:
                    bad("m", f"evaluates to {self.measurements(r)} for r={r}")
        if not self.kappas:
            bad("kappas", "must be non-empty")
        if list(self.kappas) != sorted(self.kappas) or min(self.kappas) < 1.0:
            bad("kappas", "must be increasing and >= 1")
        if not self.methods:
            bad("methods", "must name at least one method")
        for meth in self.methods:
            if meth not in METHODS:
                bad("methods", f"unknown method {meth!r}; expected {METHODS}")
        if not self.mu > 0:
            bad("mu", "must be positive")
        if self.max_iters < 0:
            bad("max_iters", "must be non-negative")
        if not self.threshold > 0:
            bad("threshold", "must be positive")
        if self.trials < 1:
            bad("trials", "must be at least 1")
        if self.directions < 1:
            bad("directions", "must be at least 1")
        if self.horizon < 0:
            bad("horizon", "must be non-negative (0 selects the default horizon)")
        if self.driver not in ("real", "virtual"):
            bad("driver", "must be 'real' or 'virtual'")
        if self.rip_trials < 1:
            bad("rip_trials", "must be at least 1")
        if self.backend not in BACKENDS:
            bad("backend", f"must be one of {BACKENDS}")
        if self.threads < 1:
            bad("threads", "must be at least 1")

    def measurements(self, r):
        """Evaluate ``m`` for rank ``r``."""
        return _eval_count(self.m, {"n1": self.n1, "n2": self.n2, "r": r})

    def with_overrides(self, **changes):
        return replace(self, **changes)

    def echo(self):
        """``key=value`` lines that :func:`parse_config` reads back to this spec.

        ``threads`` is left out: it changes the schedule, never the output.
        """
        lines = []
        for f in fields(self):
            if f.name != "threads":
                lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


# -- parsing ----------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Mult: operator.mul, ast.Sub: operator.sub}


def _eval_count(expr, names):
    if isinstance(expr, int):
        return expr
    try:
        tree = ast.parse(str(expr), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"m: cannot parse {expr!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id in names:
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ConfigError(f"m: unsupported expression {expr!r}")

    return int(round(ev(tree)))


def _parse_ints(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, _, rest = part.partition("..")
            hi, _, step = rest.partition(":")
            out.extend(range(int(lo), int(hi) + 1, int(step) if step else 1))
        else:
            out.append(int(part))
    return tuple(out)


def _parse_floats(text):
    if ".." in text and ":" not in text and "," not in text and "." not in text.replace("..", ""):
        return tuple(float(v) for v in _parse_ints(text))
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            out.extend(float(v) for v in _parse_ints(part))
        elif part:
            out.append(float(part))
    return tuple(out)


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS = {
    "kind": str.strip,
    "n1": int,
    "n2": int,
    "ranks": _parse_ints,
    "r": _parse_ints,
    "m": str.strip,
    "ms": _parse_ints,
    "kappas": _parse_floats,
    "kappa": _parse_floats,
    "methods": lambda s: tuple(p.strip().lower() for p in s.split(",") if p.strip()),
    "mu": float,
    "eta": float,
    "max_iters": int,
    "threshold": float,
    "trials": int,
    "seed": int,
    "directions": int,
    "horizon": int,
    "driver": str.strip,
    "rip_trials": int,
    "backend": str.strip,
    "timing": _parse_bool,
    "threads": int,
    "record_dist": _parse_bool,
}
_ALIASES = {"r": "ranks", "kappa": "kappas", "eta": "mu"}


def parse_assignments(lines, base=None):
    """Parse ``key=value`` lines into a dict of typed field values."""
    values = {} if base is None else dict(base)
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in _PARSERS:
            raise ConfigError(f"{key}: unknown configuration key (line {lineno})")
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: invalid value {value!r} ({exc})") from exc
        values[_ALIASES.get(key, key)] = parsed
    return values


def parse_config(text, base=None):
    values = parse_assignments(text.splitlines(), base)
    if "kind" not in values:
        raise ConfigError("kind: missing")
    return ExperimentSpec(**values)


def load_config(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


ALL_METHODS = ("scaledgd", "vanillagd", "rgd")

# Full-scale operators (up to 15000 x 10^4 doubles, about 1.2 GB) exceed the
# default streaming threshold; streaming them would be orders of magnitude slower.

PRESETS = {
    "paper-exp1": dict(kind=CONVERGENCE, n1=100, n2=100, ranks=(30,), m="4*n1*r",
                       kappas=(5.0,), methods=ALL_METHODS, max_iters=400, threshold=1e-13,
                       backend=MATERIALIZED),
    "desk-exp1": dict(kind=CONVERGENCE, n1=60, n2=60, ranks=(8,), m="4*n1*r",
                      kappas=(5.0,), methods=ALL_METHODS, max_iters=120, threshold=1e-10),
    "paper-exp2": dict(kind=KAPPA_SWEEP, n1=100, n2=100, ranks=(30,), m="5*n1*r",
                       kappas=tuple(float(k) for k in range(1, 16)), methods=ALL_METHODS,
                       max_iters=1000, threshold=1e-6, backend=MATERIALIZED),
    "desk-exp2": dict(kind=KAPPA_SWEEP, n1=60, n2=60, ranks=(6,), m="5*n1*r",
                      kappas=(2.0, 5.0, 10.0, 15.0), methods=ALL_METHODS,
                      max_iters=3000, threshold=1e-6),
    "paper-exp3": dict(kind=PHASE_DIAGRAM, n1=70, n2=80, ranks=tuple(range(1, 21)),
                       ms=tuple(range(1000, 13001, 1000)), kappas=(5.0,),
                       methods=("scaledgd",), max_iters=100, threshold=1e-8, trials=10,
                       backend=MATERIALIZED),
    "desk-exp3": dict(kind=PHASE_DIAGRAM, n1=40, n2=44, ranks=tuple(range(1, 11)),
                      ms=tuple(range(400, 4001, 400)), kappas=(5.0,),
                      methods=("scaledgd",), max_iters=100, threshold=1e-8, trials=5),
    "desk-audit": dict(kind=VIRTUAL_AUDIT, n1=32, n2=32, ranks=(3,), m="5*(n1+n2)*r",
                       kappas=(5.0,), directions=16, horizon=0),
    "desk-rip": dict(kind=RIP_PROBE, n1=16, n2=16, ranks=(2,), m="8*(n1+n2)*r",
                     rip_trials=500),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; known: {sorted(PRESETS)}")
    values = dict(PRESETS[name])
    values.update(overrides)
    return ExperimentSpec(**values)
