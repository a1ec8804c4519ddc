"""Exception types shared across the laboratory modules."""


class OsLabError(Exception):
    """Base class for all laboratory errors."""


class InvalidResolutionError(OsLabError):
    """Grid size below the supported minimum."""


class IncompatibleGridError(OsLabError):
    """Operands live on different grids."""


class LinearSolveError(OsLabError):
    """A direct solve failed or is untrustworthy (near-singular matrix)."""

    def __init__(self, msg, condition_estimate=None):
        super().__init__(msg)
        self.condition_estimate = condition_estimate


class PowerIterationError(OsLabError):
    """Gain iteration did not converge; carries the last iterate."""

    def __init__(self, msg, last_gain=None, last_residual=None):
        super().__init__(msg)
        self.last_gain = last_gain
        self.last_residual = last_residual


class ScanError(OsLabError):
    """Too many excluded points in a spectral-parameter scan."""


class StaleResolutionError(OsLabError):
    """A record failed its grid-refinement agreement gate."""


class UnderResolvedError(OsLabError):
    """Boundary layer thinner than the grid can represent; raise n."""


class DegenerateDeterminantError(OsLabError):
    """Boundary-matching determinant numerically singular; reports L."""

    def __init__(self, msg, layer_scale=None):
        super().__init__(msg)
        self.layer_scale = layer_scale


class AiryRangeError(OsLabError, ValueError):
    """Argument outside the supported evaluation range."""


class OrthogonalityError(OsLabError):
    """Initial data violates the wall-compatibility moments."""


class InstabilityError(OsLabError):
    """Time integration blew up; carries a diagnostic."""

    def __init__(self, msg, diagnostic=None):
        super().__init__(msg)
        self.diagnostic = diagnostic


class CflError(OsLabError):
    """Requested time step exceeds the advective limit."""


class WeightTooLargeError(OsLabError):
    """Exponential report weight exceeds the measured decay rate."""


class ConfigError(OsLabError):
    """Configuration file or flag violates the schema."""
