"""Exception types shared across the package."""


class HohmannError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(HohmannError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Dynamics evaluated at zero radius."""


class InfeasibleTransferError(HohmannError):
    """A two-impulse transfer cannot reach the outer circle.

    Carries the constraint value ``g`` (negative when infeasible) so callers
    can report how far from feasibility the point is.
    """

    def __init__(self, g: float, message: str | None = None):
        self.g = float(g)
        super().__init__(message or f"infeasible transfer point (g = {g:.6e} < 0)")


class DegenerateImpulseError(HohmannError):
    """An impulse magnitude fell below the degeneracy floor (dv/|dv| undefined)."""


class PivotDegeneracyError(HohmannError):
    """All candidate pivots in the multiplier elimination are numerically singular."""


class PreconditionError(HohmannError):
    """A documented precondition of an operation was violated."""


class PropagationFailureError(HohmannError):
    """Adaptive step size underflowed, typically near a gravitational singularity."""


class NonconvergenceError(HohmannError):
    """Newton iteration failed to converge; carries the last iterate for diagnosis."""

    def __init__(self, message: str, last_iterate=None, residual_norm: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


class MeshOverflowError(NonconvergenceError):
    """Mesh refinement would exceed the allowed number of nodes."""


class EmptyGridError(HohmannError):
    """A grid search found no feasible node."""


class ConfigError(HohmannError):
    """A scenario configuration is malformed or inconsistent."""
