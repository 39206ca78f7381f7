"""Exception hierarchy shared across the package."""


class SpinNoiseError(Exception):
    """Base class for all package errors."""


class ConfigError(SpinNoiseError, ValueError):
    """Invalid user configuration or input data."""


class NumericalError(SpinNoiseError, RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not converge.

    Attributes
    ----------
    value, abserr : float
        Best estimate and QUADPACK's error estimate at termination.
    """

    def __init__(self, message, value=float("nan"), abserr=float("nan")):
        super().__init__(message)
        self.value = value
        self.abserr = abserr


class AliasingError(ConfigError):
    """A carrier lies outside the representable band of a trace."""


class BandError(ConfigError):
    """A multiplet does not fit inside a down-converted channel."""


class FitError(NumericalError):
    """Line fitting failed."""


class DegenerateFitError(FitError):
    """Peaks are too close together to be fitted independently."""


class RankDeficiencyError(NumericalError):
    """A regression or inversion problem lacks the information to fix its unknowns."""

    def __init__(self, message, directions=None, suggestions=None):
        super().__init__(message)
        self.directions = directions or []
        self.suggestions = suggestions or []


class AmbiguousBranchError(NumericalError):
    """Both (or neither) down-conversion sidebands are consistent with the prior."""
