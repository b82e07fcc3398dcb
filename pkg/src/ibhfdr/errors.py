"""Exception types raised across the package.

Validation problems derive from :class:`ValueError` so callers that only
care about "bad input" can catch that; the CLI maps them to exit code 2.
"""


class FDRError(Exception):
    """Base class for all package errors."""


class ValidationError(FDRError, ValueError):
    """Input or parameter failed a contract check."""


class EmptyInputError(ValidationError):
    pass


class OutOfRangeError(ValidationError):
    def __init__(self, message, line=None, value=None):
        super().__init__(message)
        self.line = line
        self.value = value


class NonFiniteError(ValidationError):
    pass


class LengthMismatchError(ValidationError):
    pass


class LambdaOutOfRangeError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class EmptyFileError(ValidationError):
    pass


class DegenerateEstimatorError(FDRError, ArithmeticError):
    """The m0 estimate is zero, so the threshold line is unbounded."""


class MissingCorrectionError(FDRError, LookupError):
    """No correction factors are available for the requested m."""

    def __init__(self, m):
        super().__init__(f"no correction factors for m={m}")
        self.m = m


class VersionMismatchError(FDRError):
    pass
