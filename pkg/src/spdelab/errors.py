"""Exception types shared across the package."""


class SpdeLabError(Exception):
    """Base class for all package errors."""


class ParameterError(SpdeLabError, ValueError):
    """A model or operation parameter lies outside its domain."""


class NumericError(SpdeLabError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class InvariantViolation(SpdeLabError):
    """A documented invariant does not hold for the given inputs."""


class ModelResolutionError(SpdeLabError):
    """The grid is too coarse to represent the covariance model."""


class AssumptionViolation(SpdeLabError):
    """Coefficients violate ellipticity or boundedness bounds."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class StatisticsError(SpdeLabError):
    """Not enough (or inconsistent) data for a statistical estimate."""


class DegenerateDataError(StatisticsError):
    """The data has zero variance."""


class NotApplicableError(SpdeLabError):
    """The requested quantity is undefined for this problem."""


class ConfigError(SpdeLabError):
    """Malformed or inconsistent experiment configuration."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field

    def __str__(self):
        msg = super().__str__()
        return f"{msg} (line {self.line})" if self.line is not None else msg
