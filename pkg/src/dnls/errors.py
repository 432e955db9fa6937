"""Exception types shared across the package."""


class DnlsError(Exception):
    """Base class for all package-specific errors."""


class GridMismatchError(DnlsError):
    """Fields or coefficient tables live on different grids."""


class DomainError(DnlsError, ValueError):
    """Argument outside the mathematically admissible range."""


class InvalidMetricError(DnlsError):
    """Metric field fails symmetry or uniform coercivity."""


class StabilityError(DnlsError):
    """Time stepping blew up; carries a suggested step size."""

    def __init__(self, message: str, dt_suggestion: float | None = None):
        super().__init__(message)
        self.dt_suggestion = dt_suggestion


class SeriesAlignmentError(DnlsError):
    """Observable series with mismatched time stamps."""


class SamplingError(DnlsError):
    """Recorded cadence too sparse for the requested diagnostic."""


class ConfigError(DnlsError):
    """Run configuration is malformed or violates a constraint."""
