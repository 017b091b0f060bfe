"""Exception hierarchy shared by all flockd modules."""


class FlockdError(Exception):
    """Base class for every error raised by flockd."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class DomainError(FlockdError, ValueError):
    """Argument outside the mathematical or validated domain."""

    kind = "domain"


class UsageError(FlockdError, ValueError):
    """Unsupported combination of arguments."""

    kind = "usage"


class ConvergenceError(FlockdError, ArithmeticError):
    """An iterative numerical method failed to reach its tolerance."""

    kind = "convergence"


class KinematicsError(DomainError):
    """Speed at or above the speed of light."""

    kind = "kinematics"


class ClosureSingularityError(DomainError):
    """The tetratomic closure denominator is not positive."""

    kind = "closure_singularity"


class DegenerateClosureError(FlockdError, ArithmeticError):
    """The 2x2 closure system is numerically singular."""

    kind = "degenerate_closure"


class StateError(FlockdError, ValueError):
    """Ensemble state violates an invariant (e.g. non-positive temperature)."""

    kind = "state"


class KernelValidationError(FlockdError, ValueError):
    """A communication kernel failed validation.

    ``witness`` holds the offending pair of sample points when available.
    """

    kind = "kernel_validation"

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness

    def to_dict(self):
        out = super().to_dict()
        if self.witness is not None:
            out["witness"] = [list(map(float, p)) for p in self.witness]
        return out


class NormalizationError(ConvergenceError):
    """Frame normalization did not converge."""

    kind = "normalization"


class StiffnessError(FlockdError, ArithmeticError):
    """Step size fell below the allowed minimum."""

    kind = "stiffness"


class SolverError(ConvergenceError):
    """Scalar root-finding failed (e.g. root not bracketed)."""

    kind = "solver"


class ConfigError(FlockdError, ValueError):
    """Invalid configuration file or field."""

    kind = "validation"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def to_dict(self):
        out = super().to_dict()
        if self.field is not None:
            out["field"] = self.field
        return out
