"""Exception types raised across the package."""


class LinPoissonError(Exception):
    """Base class for all package errors."""


class DomainError(LinPoissonError, ValueError):
    """A coordinate or parameter lies outside its admissible range."""


class FeasibilityError(LinPoissonError):
    """Coefficients produce a negative intensity (or a non-positive log argument)."""

    def __init__(self, message, worst_point=None, worst_value=None):
        super().__init__(message)
        self.worst_point = worst_point
        self.worst_value = worst_value


class BoundViolationError(LinPoissonError):
    """The thinning rate bound is smaller than the intensity somewhere."""


class QuadratureError(LinPoissonError, ArithmeticError):
    """Adaptive quadrature failed to reach its tolerance."""

    def __init__(self, message, error_estimate=None):
        super().__init__(message)
        self.error_estimate = error_estimate


class CapacityError(LinPoissonError):
    """A request is too large for exhaustive enumeration."""


class InitializationError(LinPoissonError):
    """No strictly feasible starting point could be constructed."""


class RankDeficiencyError(LinPoissonError, ArithmeticError):
    """A matrix that must have full column rank does not."""


class StudyError(LinPoissonError):
    """A Monte-Carlo study could not be completed."""
