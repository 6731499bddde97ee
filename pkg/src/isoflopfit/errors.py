"""Exception hierarchy shared by the fitting modules and the CLI."""

from __future__ import annotations


class IsoflopError(Exception):
    """Base class for all toolkit errors."""


class DomainError(IsoflopError, ValueError):
    """An argument lies outside the domain of the function (e.g. N <= 0)."""


class AllocationUndefinedError(DomainError):
    """Compute-optimal allocation does not exist for a degenerate surface."""


class UnreachableLossError(DomainError):
    """Requested loss cannot be reached by any compute budget."""


class DataError(IsoflopError, ValueError):
    """Input data is malformed, incomplete or non-finite.

    ``lines`` lists offending 1-based line numbers when the data came from a file.
    """

    def __init__(self, message: str, *, lines: list[int] | None = None):
        super().__init__(message)
        self.lines = list(lines or [])


class FitError(IsoflopError):
    """A fitting procedure failed to produce a usable estimate."""


class NnlsConvergenceError(FitError):
    """Active-set NNLS hit its iteration cap.

    The best iterate found so far is attached as ``best``.
    """

    def __init__(self, message: str, *, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(IsoflopError, ValueError):
    """A run configuration is invalid."""
