"""Exception types shared across the package."""


class GlucodynError(Exception):
    """Base class for every error this package raises deliberately."""


class CgmParseError(GlucodynError):
    """Malformed input file; carries the offending 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class RangeError(GlucodynError):
    """A glucose reading fell outside the sensor range."""


class SeriesValidationError(GlucodynError):
    """A structural rule on a series was violated (duplicates, ordering, length)."""


class ConfigurationError(GlucodynError):
    """Invalid knots, basis sizes, or other configuration."""


class SingularFitError(GlucodynError):
    """Normal equations are singular or numerically unusable."""


class InsufficientDataError(GlucodynError):
    """Not enough observations for the requested computation."""


class BandwidthError(GlucodynError):
    """Automatic bandwidth selection failed or a bandwidth matrix is unusable."""


class DomainError(GlucodynError):
    """Evaluation point outside the fitted domain."""


class FitError(GlucodynError):
    """Penalized regression could not be fit."""


class DiagnosticsError(GlucodynError):
    """Fit diagnostics are undefined for this sample size."""


class ScenarioError(GlucodynError):
    """Synthetic-cohort scenario parameters are unusable."""
