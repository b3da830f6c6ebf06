"""Zone-level traffic-mixture estimation from gridded mobile traffic."""

from trafficlens.errors import (
    InputValidationError,
    NumericError,
    RankDeficientError,
    TrafficLensError,
    UndefinedCorrelationError,
)

__version__ = "0.1.0"

__all__ = [
    "InputValidationError",
    "NumericError",
    "RankDeficientError",
    "TrafficLensError",
    "UndefinedCorrelationError",
    "__version__",
]
