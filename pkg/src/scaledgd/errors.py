"""Exception hierarchy shared by every module."""


class ScaledGDError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ScaledGDError, ValueError):
    """Shapes or ranks are inconsistent."""


class ContractError(ScaledGDError, ValueError):
    """An input violates a documented precondition (e.g. non-orthonormal basis)."""


class DomainError(ScaledGDError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ConfigError(ScaledGDError, ValueError):
    """An experiment configuration is invalid."""


class NumericalError(ScaledGDError, ArithmeticError):
    """Base for numerical breakdowns inside a solver."""


class RankCollapseError(NumericalError):
    """A Gram matrix or iterate lost rank.

    Attributes
    ----------
    sigma_min : float
        Smallest eigenvalue (Gram) or singular value (iterate) observed.
    iteration : int or None
        Solver iteration at which the collapse happened, when known.
    """

    def __init__(self, message, sigma_min, iteration=None):
        super().__init__(message)
        self.sigma_min = float(sigma_min)
        self.iteration = iteration

    def with_iteration(self, iteration):
        err = RankCollapseError(f"iteration {iteration}: {self}", self.sigma_min, iteration)
        err.__cause__ = self
        return err


class DegenerateInitError(NumericalError):
    """Spectral initialization produced a zero singular value among the top r."""
