"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class AnosovLabError(Exception):
    """Base class; the CLI maps any subclass to exit status 1."""


class ModelError(AnosovLabError, ValueError):
    pass


class NonInvertibleRoof(ModelError):
    pass


class DegenerateFixedPoint(ModelError):
    pass


class ClosedFormUnavailable(ModelError):
    pass


class ConeViolation(AnosovLabError):
    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class ResolutionTooCoarse(AnosovLabError, ValueError):
    pass


class MemoryBudgetExceeded(AnosovLabError):
    pass


class CertificationFailed(AnosovLabError):
    def __init__(self, message: str, class_id: int | None = None):
        super().__init__(message)
        self.class_id = class_id


class NoHitWithinBudget(AnosovLabError):
    pass


class PreconditionViolation(AnosovLabError, ValueError):
    pass


class LocalProductFailure(AnosovLabError):
    pass


class DegenerateDistance(AnosovLabError):
    pass


class BranchMismatch(AnosovLabError):
    def __init__(self, message: str, witness: int | None = None):
        super().__init__(message)
        self.witness = witness


class LiftDiscontinuity(AnosovLabError):
    pass


class SmoothingDriftTooLarge(AnosovLabError):
    pass


class NonTransverseCrossing(AnosovLabError):
    pass


class InconsistentPipeline(AnosovLabError):
    pass


class ConfigError(AnosovLabError, ValueError):
    pass


class AmbiguousLabel(AnosovLabError):
    """Raised only in strict mode; by default ambiguous boxes are counted and excluded."""

    def __init__(self, message: str, count: int = 0):
        super().__init__(message)
        self.count = count
