"""Exception hierarchy shared by every module."""


class PoisRatioError(Exception):
    """Base class for all package errors."""


class DomainError(PoisRatioError, ValueError):
    """An argument lies outside the domain of the function."""


class SeparationError(PoisRatioError):
    """A zero count was observed; no interval is reported for such data."""


class NumericError(PoisRatioError, ArithmeticError):
    """An iterative solver failed to converge or produced a non-finite value."""


class DegenerateSampleError(PoisRatioError):
    """No usable observation remains after discarding zero counts."""


class SurfaceFormatError(PoisRatioError):
    """A surface or table file could not be parsed."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SurfaceVersionError(SurfaceFormatError):
    """The file declares a format version this package cannot read."""
