"""Exception hierarchy shared across the package."""


class MfcovError(Exception):
    """Base class for all package errors."""


class ConfigError(MfcovError, ValueError):
    """Invalid experiment configuration or CLI input."""


class NumericalError(MfcovError, ArithmeticError):
    """Base class for numerical failures."""


class DefinitenessError(NumericalError):
    """A matrix required to be SPD is not (numerically) positive definite.

    Attributes
    ----------
    eigenvalue : float or None
        The offending (smallest) eigenvalue, when known.
    level : int or None
        Fidelity level whose sample covariance failed, when raised by an
        estimator.
    which : str or None
        Which of the two per-level covariances failed (``"n_l"`` for the
        full level set, ``"n_prev"`` for the coupled prefix).
    """

    def __init__(self, message, eigenvalue=None, level=None, which=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.level = level
        self.which = which


class EigenConvergenceError(NumericalError):
    """The symmetric eigen-solver failed to converge."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class MatrixRangeError(NumericalError, OverflowError):
    """Matrix exponential would overflow double precision."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class HierarchyError(MfcovError, ValueError):
    """A coupled sample hierarchy violates its structural invariants."""


class DegenerateCorrelationError(NumericalError, ValueError):
    """|rho_1| >= 1: the allocation formula is undefined."""


class OrderingError(MfcovError, ValueError):
    """Levels are not ordered by decreasing absolute correlation."""


class BudgetError(MfcovError, ValueError):
    """Budget too small to produce a usable allocation."""


class DataFormatError(MfcovError, OSError):
    """A data file exists but cannot be parsed."""
