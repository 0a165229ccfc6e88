"""Exception types shared across the package.

The CLI maps ValidationError to exit code 2 and NumericalError to exit
code 3; everything else is a bug and propagates.
"""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition or schema."""


class NumericalError(RuntimeError):
    """Raised when a computation fails numerically (singular or degenerate
    systems, excessive bootstrap failures)."""
