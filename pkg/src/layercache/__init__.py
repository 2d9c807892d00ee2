"""Layer-aware caching for flow-matching ODE samplers."""

from .errors import (
    ConfigurationError,
    DegenerateIntervalError,
    InfeasibleBudgetError,
    InstanceTooLargeError,
    InsufficientHistoryError,
    LayerCacheError,
    NumericError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DegenerateIntervalError",
    "InfeasibleBudgetError",
    "InstanceTooLargeError",
    "InsufficientHistoryError",
    "LayerCacheError",
    "NumericError",
    "__version__",
]
