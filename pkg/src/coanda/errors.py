"""Exception types shared across the toolkit."""


class StructuralError(ValueError):
    """Index out of range, incompatible block sizes, malformed input."""


class ConfigError(ValueError):
    """Invalid run or solver configuration."""


class GeometryError(ValueError):
    """Point outside the domain, degenerate cell size, bad facet set."""


class SingularMatrixError(RuntimeError):
    """Zero (or below-threshold) pivot met during sparse LU.

    Near a bifurcation point the linearized operators lose invertibility;
    this error carries the offending pivot index so callers can report
    where the factorization broke down.
    """

    def __init__(self, message: str, pivot_index: int = -1):
        super().__init__(message)
        self.pivot_index = pivot_index


class ShiftRetryError(RuntimeError):
    """The shifted pencil A - shift*M is singular; retry with another shift."""


class NewtonDivergenceError(RuntimeError):
    """Newton failed to converge; carries the residual trace and last iterate."""

    def __init__(self, message: str, trace=None, last=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
        self.last = last


class BifurcationProximityError(RuntimeError):
    """Singular Jacobian during a solve, signalling mu at or near a critical value."""


class BranchSelectionError(RuntimeError):
    """A continuation run failed to land on the requested solution branch."""
