"""Exception hierarchy shared by every pointref module."""


class PointRefError(Exception):
    """Base class for all errors raised by pointref."""


class ValidationError(PointRefError, ValueError):
    """An input value violates a documented invariant.

    ``field`` names the offending field when one can be identified.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DegenerateRay(ValidationError):
    pass


class NoIntersection(PointRefError):
    pass


class DegenerateVector(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ZeroVector(DegenerateVector):
    pass


class LogitDimensionMismatch(DimensionMismatch):
    pass


class MissingEmbedding(PointRefError, KeyError):
    pass


class NonDifferentiablePoint(PointRefError):
    """Raised when a gradient check lands on (or straddles) a kink."""


class ParseError(PointRefError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
