"""Exception hierarchy shared across the package.

Validation errors (bad inputs, malformed files, violated preconditions) map
to CLI exit code 2; everything else that escapes is a runtime failure (1).
"""


class XTrendError(Exception):
    """Base class for all package errors."""


class ValidationError(XTrendError, ValueError):
    """Input violates a documented precondition or invariant."""


class ParseError(ValidationError):
    """Malformed input file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientHistoryError(ValidationError):
    """Requested computation reaches before the start of the series."""


class NumericalError(XTrendError):
    """A numerical routine failed (factorization, non-finite values)."""
