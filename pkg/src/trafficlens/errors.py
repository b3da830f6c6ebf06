"""Exception hierarchy shared by all trafficlens modules.

Input problems (bad files, bad parameters) derive from ``InputValidationError``
and map to CLI exit code 2; numerical failures derive from ``NumericError`` and
map to exit code 3.
"""


class TrafficLensError(Exception):
    """Base class for every error raised by the package."""


class InputValidationError(TrafficLensError, ValueError):
    """Malformed or inconsistent input data or parameters."""


class NumericError(TrafficLensError, ArithmeticError):
    """A computation is undefined for the given data."""


class UndefinedCorrelationError(NumericError):
    """Correlation requested for a series with zero variance."""


class RankDeficientError(NumericError):
    """Design matrix does not have full column rank."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)
