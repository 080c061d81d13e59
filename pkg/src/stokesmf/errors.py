"""Exception types shared across the package."""


class StokesMFError(Exception):
    """Base class for every error raised on purpose by this package."""


class ValidationError(StokesMFError, ValueError):
    """Invalid input (bad shapes, non-unit orientations, inconsistent parameters)."""


class GuardError(StokesMFError, RuntimeError):
    """Raised when particles come closer than the separation guard allows."""

    def __init__(self, message, d_min=None, threshold=None, t=None):
        super().__init__(message)
        self.d_min = d_min
        self.threshold = threshold
        self.t = t


class ContractionError(StokesMFError, RuntimeError):
    """Fixed-point iteration for the effective velocity failed to contract."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class CapacityError(StokesMFError, ValueError):
    """Problem too large for an exact solver."""


class ConvergenceError(StokesMFError, RuntimeError):
    """An iterative solver (Sinkhorn) did not reach its tolerance."""

    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class SetupError(StokesMFError, RuntimeError):
    """Experiment setup could not be completed (e.g. rejection budget exhausted)."""
