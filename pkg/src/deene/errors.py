"""Exception hierarchy shared by all modules."""

from __future__ import annotations

import numpy as np


class DeeneError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(DeeneError, ValueError):
    """A caller-supplied value violates a documented precondition."""


class ConfigurationError(DeeneError, ValueError):
    """An experiment configuration is inconsistent or unusable."""


class SingularKKTError(DeeneError, np.linalg.LinAlgError):
    """A KKT (saddle-point) matrix could not be factorized.

    Attributes:
        rank: numerically estimated rank of the offending constraint block.
        expected: rank required for a nonsingular system.
    """

    def __init__(self, message: str, rank: int | None = None, expected: int | None = None):
        super().__init__(message)
        self.rank = rank
        self.expected = expected


class NotPositiveDefiniteError(DeeneError, np.linalg.LinAlgError):
    """The quadratic term of a QP is not (numerically) positive definite."""


class NonConvergenceError(DeeneError, RuntimeError):
    """The active-set iteration hit its iteration cap."""

    def __init__(self, message: str, x: np.ndarray, residual: float, active_set: list[int]):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.active_set = active_set


class InfeasibleError(DeeneError, RuntimeError):
    """No point satisfies the inequality constraints."""


class StaleGainsError(DeeneError, RuntimeError):
    """Correction gains were built for a different active set than the nominal point."""


class DeePCError(DeeneError, RuntimeError):
    """A DeePC solve failed; wraps the underlying QP error with horizon context."""
