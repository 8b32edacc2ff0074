"""Exception hierarchy shared by the numerics, solvers, services and CLI layers."""
from typing import Optional, Tuple


class RateDistortionError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(RateDistortionError, ValueError):
    """Invalid parameters or inputs (bad source, negative beta, non-probability vector...)."""


class UnsupportedDimensionError(ValidationError):
    """Raised when a dimension other than d = 1 is requested."""


class EvaluationError(RateDistortionError):
    """A custom distortion returned a negative or non-finite value."""

    def __init__(self, message: str, index: Optional[Tuple[int, int]] = None):
        super().__init__(message)
        self.index = index


class ProjectionError(RateDistortionError):
    """No reference mass fell inside the grid cells."""


class NumericalError(RateDistortionError):
    """Zero partition rows, descent violations and similar breakdowns."""


class SolverError(RateDistortionError):
    """The constrained solver could not bracket the multiplier."""

    def __init__(self, message: str, bracket: Optional[Tuple[float, float]] = None):
        super().__init__(message)
        self.bracket = bracket


class StudyError(RateDistortionError):
    """A solve inside a convergence study did not converge."""

    def __init__(self, message: str, n: Optional[int] = None):
        super().__init__(message)
        self.n = n


class ConfigError(RateDistortionError):
    """Run config could not be parsed or validated; carries the offending line."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        super().__init__(message)
        self.line = line
        self.path = path

    def __str__(self) -> str:
        base = super().__str__()
        if self.path and self.line:
            return f"{self.path}:{self.line}: {base}"
        if self.path:
            return f"{self.path}: {base}"
        return base
