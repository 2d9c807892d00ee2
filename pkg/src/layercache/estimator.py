"""History-based extrapolation of hidden states and velocities.

All estimates are first order in sigma: a slope over a lookback window applied
from the newest committed record. The window length adapts to the profiled
drift of the group being reconstructed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence, TYPE_CHECKING

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateIntervalError,
    InsufficientHistoryError,
)

if TYPE_CHECKING:
    from .sampler import GroupHistory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptiveKPolicy:
    """Drift thresholds and the extrapolation spans they select."""

    tau_low: float = 0.10
    tau_high: float = 0.20
    k_max: int = 6
    k_mid: int = 3
    k_min: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.tau_low < self.tau_high:
            raise ConfigurationError("need 0 < tau_low < tau_high")
        if not self.k_max >= self.k_mid >= self.k_min >= 1:
            raise ConfigurationError("need k_max >= k_mid >= k_min >= 1")


def adaptive_k(delta: float, policy: AdaptiveKPolicy) -> int:
    """Span for a profiled drift value: calm groups look further back."""
    if not math.isfinite(delta) or delta < 0:
        raise ConfigurationError(f"drift must be finite and >= 0, got {delta}")
    if delta < policy.tau_low:
        return policy.k_max
    if delta < policy.tau_high:
        return policy.k_mid
    return policy.k_min


def group_jvp(history: "GroupHistory", group: int, span_k: int) -> np.ndarray:
    """Finite-difference slope dh/dsigma over the last ``span_k`` records.

    The lookback is clamped (and logged) when fewer records are committed.
    """
    if span_k < 1:
        raise ConfigurationError("span_k must be >= 1")
    records = history.records(group)
    if len(records) < 2:
        raise InsufficientHistoryError(
            f"group {group} has {len(records)} committed records, need at least 2"
        )
    span = span_k
    if span > len(records) - 1:
        span = len(records) - 1
        logger.debug("group %d: span %d clamped to %d committed intervals",
                     group, span_k, span)
    newest = records[-1]
    oldest = records[-1 - span]
    d_sigma = newest.sigma - oldest.sigma
    if d_sigma == 0.0:
        raise DegenerateIntervalError("lookback window has zero sigma width")
    return (newest.hidden - oldest.hidden) / d_sigma


def group_estimate(history: "GroupHistory", group: int, sigma_t: float,
                   sigma_prev: float, span_k: int) -> np.ndarray:
    """First-order extrapolation of a group's hidden state to ``sigma_t``."""
    records = history.records(group)
    if len(records) < 2:
        raise InsufficientHistoryError(
            f"group {group} has {len(records)} committed records, need at least 2"
        )
    newest = records[-1]
    if not math.isclose(sigma_prev, newest.sigma, rel_tol=1e-12, abs_tol=1e-12):
        raise ConfigurationError(
            f"sigma_prev={sigma_prev} does not match the newest committed "
            f"sigma {newest.sigma} for group {group}"
        )
    slope = group_jvp(history, group, span_k)
    return newest.hidden + slope * (sigma_t - newest.sigma)


def mean_velocity(x_a: np.ndarray, x_b: np.ndarray, sigma_a: float,
                  sigma_b: float) -> np.ndarray:
    """Average velocity realized between two states on the sigma axis."""
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    if x_a.shape != x_b.shape:
        raise ConfigurationError("state shapes differ")
    if sigma_b == sigma_a:
        raise DegenerateIntervalError("states share the same sigma")
    return (x_b - x_a) / (sigma_b - sigma_a)


def meancache_estimate(velocity_history: Sequence[tuple[float, np.ndarray]],
                       span_k: int, sigma_t: float) -> np.ndarray:
    """Window-mean velocity with a centered first-order correction.

    The mean over the last ``span_k`` recorded velocities is referenced at the
    window's mean sigma, then corrected by the endpoint slope. For velocities
    linear in sigma this is exact; for ``span_k == 1`` it reduces to slope
    extrapolation from the last two records.
    """
    if span_k < 1:
        raise ConfigurationError("span_k must be >= 1")
    n = len(velocity_history)
    if n < 2:
        raise InsufficientHistoryError(
            f"velocity history has {n} records, need at least 2"
        )
    k_eff = min(span_k, n)
    if span_k > n:
        logger.debug("meancache window %d clamped to %d records", span_k, n)
    window = list(velocity_history[-k_eff:])
    sigmas = np.array([s for s, _ in window])
    vels = np.stack([v for _, v in window])
    v_bar = vels.mean(axis=0)
    sigma_ref = float(sigmas.mean())
    if k_eff >= 2:
        (s_old, v_old), (s_new, v_new) = window[0], window[-1]
    else:
        (s_old, v_old), (s_new, v_new) = velocity_history[-2], velocity_history[-1]
    if s_new == s_old:
        raise DegenerateIntervalError("slope window has zero sigma width")
    slope = (v_new - v_old) / (s_new - s_old)
    return v_bar + slope * (sigma_t - sigma_ref)
