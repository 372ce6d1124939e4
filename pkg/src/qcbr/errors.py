"""Exception types shared across the package."""


class QcbrError(Exception):
    """Base class for all package errors."""


class InvalidArgument(QcbrError, ValueError):
    pass


class CapacityError(QcbrError):
    """Problem too large for the dense simulator."""


class DegenerateInstance(QcbrError):
    """Instance or data cannot be processed (zero distance spread, rank deficiency)."""


class Infeasible(QcbrError):
    """No valid assignment exists, e.g. more workers than patients."""


class NoExperience(QcbrError):
    """Case memory has nothing to offer for the request."""


class OptimizationFailure(QcbrError):
    """Objective became non-finite; the partial trace is attached."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class TrainingFailure(OptimizationFailure):
    pass
