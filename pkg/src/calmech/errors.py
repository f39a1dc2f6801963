"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class CalmechError(Exception):
    """Base class for every error raised by this package."""


class InputError(CalmechError):
    """Bad user input. The CLI maps these to exit code 2."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SchemaError(InputError):
    """A required field is missing or has the wrong shape."""


class ValidationError(InputError):
    """A field is present but violates an invariant."""


class ConfigError(InputError):
    pass


class ZeroEvidence(CalmechError):
    """Bayes update with a zero normalizer."""


class NotBayesPlausible(CalmechError):
    pass


class PriorOutsideHull(CalmechError):
    pass


class WrongDimension(CalmechError):
    pass


class DegenerateDensity(InputError):
    pass


class ZeroDensity(CalmechError):
    pass


class IrregularDistribution(CalmechError):
    """Virtual values are not monotone; ironing is not supported."""


class InfeasibleProblem(CalmechError):
    pass


class DimensionMismatch(CalmechError):
    pass


class NumericalFailure(CalmechError):
    """Solver residuals stayed above the acceptance threshold."""


class InsufficientData(CalmechError):
    pass
