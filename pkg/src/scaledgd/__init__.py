"""Low-rank matrix sensing with scaled gradient descent.

Modules
-------
matkit      dense linear-algebra kernels (SVD, spectral norm, Gram solves)
sensing     Gaussian measurement operators, virtual operators, RIP probe
model       ground truth, factor pairs and the dist metric
solvers     spectral initialization, ScaledGD, vanilla GD and Riemannian GD
virtualseq  virtual sequences and decoupling audits
bench       seeded experiments and the ``scaledgd-bench`` command
"""

from .errors import (
    ConfigError,
    ContractError,
    DegenerateInitError,
    DimensionError,
    DomainError,
    NumericalError,
    RankCollapseError,
    ScaledGDError,
)
from .matkit import CompactSVD, full_svd, orthonormal_complement, solve_gram, spectral_norm, top_r_svd
from .model import FactorPair, GroundTruth, assemble, dist, error_report, generate_ground_truth
from .sensing import SensingOperator, VirtualDirection, estimate_rip, orthonormal_basis_operator, rip_probe
from .solvers import (
    METHODS,
    RGD,
    SCALEDGD,
    VANILLAGD,
    IterateTrace,
    SolverConfig,
    contraction_monitor,
    rgd_step,
    run,
    scaledgd_step,
    spectral_init,
    vanillagd_step,
)
from .virtualseq import (
    coupled_diagnostics,
    decoupling_audit,
    horizon_T,
    real_trajectory,
    run_virtual,
    sample_directions,
)

__version__ = "0.1.0"
