"""Reproducible experiment harness: configs, seeded runners and a CLI."""

from .config import (
    CONVERGENCE,
    KAPPA_SWEEP,
    KINDS,
    PHASE_DIAGRAM,
    PRESETS,
    RIP_PROBE,
    VIRTUAL_AUDIT,
    ExperimentSpec,
    load_config,
    parse_config,
    preset,
)
from .experiments import (
    CellResult,
    boundary_fit,
    column_inversions,
    error_at_time,
    git_blob_hash,
    pgm_bytes,
    phase_boundary,
    read_pgm,
    run_convergence,
    run_experiment,
    run_kappa_sweep,
    run_phase_diagram,
    run_rip_probe,
    run_virtual_audit,
)
from .seeds import derive_seed, seed_derivation
