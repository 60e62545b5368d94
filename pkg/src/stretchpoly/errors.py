"""Exception types shared across the package.

Each carries the process exit code used by the command line front end.
"""


class StretchPolyError(Exception):
    exit_code = 1


class ValidationError(StretchPolyError, ValueError):
    """Bad parameter or malformed input."""

    exit_code = 2


class CapacityError(StretchPolyError):
    """A computation would exceed a hard size limit.

    ``parameter`` names the limiting quantity so callers can report it.
    """

    exit_code = 3

    def __init__(self, message, parameter=None, limit=None):
        super().__init__(message)
        self.parameter = parameter
        self.limit = limit


class NumericalError(StretchPolyError, ArithmeticError):
    """Root finding or a fit failed to produce a trustworthy number."""

    exit_code = 4


class DomainError(NumericalError):
    """Argument outside the region where a function is defined."""


class BoxError(StretchPolyError, IndexError):
    """A path or window leaves the finite environment box."""

    exit_code = 3
