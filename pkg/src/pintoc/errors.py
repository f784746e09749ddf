"""Exception hierarchy."""


class PintocError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PintocError, ValueError):
    """Invalid problem, grid or run parameters."""


class ShapeError(PintocError, ValueError):
    """Array shape or time window does not match what the operation expects."""


class NumericalError(PintocError, ArithmeticError):
    """A linear solve produced non-finite values."""


class DegenerateDirectionError(PintocError, ArithmeticError):
    """Line search or step length requested along a zero (or null) direction."""


class BoundViolation(PintocError, AssertionError):
    """A theoretical bound was observed to fail on a running instance."""
