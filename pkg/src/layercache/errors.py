"""Exception types shared across the package."""

from __future__ import annotations


class LayerCacheError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(LayerCacheError):
    """Invalid argument, shape mismatch, or malformed config/file content."""


class NumericError(LayerCacheError):
    """A computation produced NaN or Inf."""


class InsufficientHistoryError(LayerCacheError):
    """An estimator needed more committed records than were available."""


class DegenerateIntervalError(LayerCacheError):
    """A finite-difference interval had zero width."""


class InfeasibleBudgetError(LayerCacheError):
    """The compute budget cannot cover even the mandatory work."""


class InstanceTooLargeError(LayerCacheError):
    """Exhaustive search was requested for an instance beyond its size guard."""
