"""Exception types shared across the package."""


class OodhullError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OodhullError):
    """A spec or config document is malformed or names an unknown variant."""


class ValidationError(OodhullError):
    """Runtime inputs violate a documented precondition or invariant."""


class UnsupportedTransformError(OodhullError):
    """Transform requested on a feature layout that cannot support it."""


class TrainingDivergedError(OodhullError):
    """Training produced a non-finite loss. Carries the offending epoch."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class EstimationError(OodhullError):
    """A divergence estimation failed; `diagnostics` holds what is known."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class ProjectionFailedError(OodhullError):
    """Too many objective evaluations failed during the simplex search."""


class UpdateFailedError(OodhullError):
    """A policy update produced non-finite gradients."""
