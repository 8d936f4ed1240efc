"""Shared exception types."""


class NumericalAbort(RuntimeError):
    """Raised when training hits a non-finite quantity; maps to exit code 3."""
