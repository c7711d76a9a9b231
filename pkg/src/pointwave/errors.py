"""
Exception hierarchy for the pointwave toolkit

ValidationError subclasses map to CLI exit status 2,
NumericalError subclasses to exit status 3.
"""

from typing import Optional, Sequence, Tuple


class PointwaveError(Exception):
    """Base class for all toolkit errors"""


# ============================================================================
# VALIDATION (bad input, unsatisfiable preconditions)
# ============================================================================

class ValidationError(PointwaveError, ValueError):
    """Input or configuration violates a precondition"""


class ParameterError(ValidationError):
    """A scalar parameter is outside its admissible range"""


class DegenerateDomainError(ValidationError):
    """Voxelization produced no cells"""


class ConfigError(ValidationError):
    """Experiment file is malformed or contains unknown keys"""


class CapabilityError(ValidationError):
    """A data field lacks an analytic Laplacian that the operation needs"""


class CoverageError(ValidationError):
    """A retarded time falls outside the sampled modulation signal"""


class GeometryMismatchError(ValidationError):
    """Two wave fields live on different grids"""


class StabilityError(ValidationError):
    """Time step too coarse to resolve the fastest retained mode"""

    def __init__(self, message: str, required_dt: float):
        super().__init__(message)
        self.required_dt = required_dt


class ResolutionError(ValidationError):
    """FDTD spacing does not resolve the inclusion"""

    def __init__(self, message: str, required_h: float):
        super().__init__(message)
        self.required_h = required_h


class PlanningError(ValidationError):
    """Requested sweep does not fit the memory budget"""

    def __init__(self, message: str, feasible_eps: Tuple[float, float]):
        super().__init__(message)
        self.feasible_eps = feasible_eps


# ============================================================================
# NUMERICAL (computation ran but its result cannot be trusted)
# ============================================================================

class NumericalError(PointwaveError, RuntimeError):
    """A computation failed a numerical-quality check"""


class SolverError(NumericalError):
    """Eigensolver did not converge"""

    def __init__(self, message: str, residuals: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class CFLError(NumericalError):
    """FDTD solution blew up; the time step violates the stability limit"""


class QualityError(NumericalError):
    """A cross-check (e.g. route equivalence) exceeded its tolerance"""


# ============================================================================
# I/O
# ============================================================================

class ExportError(PointwaveError, OSError):
    """Artifact could not be written or read"""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path
