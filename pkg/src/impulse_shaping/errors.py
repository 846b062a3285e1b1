"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ImpulseShapingError`, so callers can catch the whole family at once.
"""


class ImpulseShapingError(Exception):
    """Base class for all package errors."""


class ShapeError(ImpulseShapingError, ValueError):
    """Matrix or vector dimensions do not agree."""


class InvalidDimensionError(ShapeError):
    """A mode count or dimension is not a positive integer."""


class ValidityError(ImpulseShapingError, ValueError):
    """A covariance or matrix violates a structural requirement (symmetry, PSD)."""


class NormalizationError(ImpulseShapingError, ValueError):
    """A direction vector is not of unit length."""


class AdmissibilityError(ImpulseShapingError, ValueError):
    """A modulation parameter lies outside its admissible set."""


class AlignmentError(ImpulseShapingError, ValueError):
    """Two time-indexed objects do not share a grid."""


class RangeError(ImpulseShapingError, ValueError):
    """A time window falls outside the grid it refers to."""


class ConfigError(ImpulseShapingError, ValueError):
    """A run configuration is malformed or fails validation."""


class IntegrationDivergedError(ImpulseShapingError, ArithmeticError):
    """A Riccati integration produced non-finite or non-PSD values.

    Attributes
    ----------
    step : int
        Index of the integrator step at which the failure was detected.
    """

    def __init__(self, message, step=-1):
        super().__init__(message)
        self.step = step


class NoSteadyStateError(ImpulseShapingError, ArithmeticError):
    """The autonomous Riccati flow did not settle within the time budget."""


class InfeasibleProtocolError(ImpulseShapingError, ArithmeticError):
    """A modulation protocol drives the covariance flow to divergence."""


class GradientUnavailableError(ImpulseShapingError, ArithmeticError):
    """Neither side of a finite-difference probe could be evaluated."""


class FactorizationError(ImpulseShapingError, ValueError):
    """A noise matrix could not be factored (not PSD)."""


class TrialError(ImpulseShapingError, RuntimeError):
    """A Monte Carlo trial failed; carries the trial index."""

    def __init__(self, message, trial):
        super().__init__(message)
        self.trial = trial
