"""Drift profiling: how much each group's hidden state moves across steps.

The profiler turns sampler traces into a :class:`StabilityMap`: for every
group g and step pair s < t, the relative L2 drift between the hidden state at
s and at t. The diagonal band (s = t-1) is the per-step drift series that the
adaptive span policy consumes; the full triangle is what the scheduler scores
cache reuse against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

DEFAULT_EPSILON = 1e-8


def velocity_change_rate(h_t: np.ndarray, h_prev: np.ndarray,
                         epsilon: float = DEFAULT_EPSILON) -> float:
    """Relative L2 change between consecutive hidden states."""
    h_t = np.asarray(h_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if h_t.shape != h_prev.shape:
        raise ConfigurationError("hidden state shapes differ")
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    denom = max(float(np.linalg.norm(h_t)), epsilon)
    return float(np.linalg.norm(h_t - h_prev)) / denom


def pairwise_drift(h_t: np.ndarray, h_s: np.ndarray,
                   epsilon: float = DEFAULT_EPSILON) -> float:
    """Same measure as :func:`velocity_change_rate` for non-adjacent steps."""
    return velocity_change_rate(h_t, h_s, epsilon)


@dataclass(frozen=True)
class GroupSummary:
    mean: float
    std: float
    max: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "max": self.max}


@dataclass(frozen=True)
class StabilityMap:
    """Averaged pairwise drift, shape (G, T, T), upper triangle populated.

    ``S[g][s][t]`` is the drift of group g between steps s and t (s < t);
    entries on and below the diagonal are zero. ``delta`` is the adjacent-step
    band, and ``summary`` holds its per-group mean, population std, and max.
    """

    S: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    num_runs: int = 1

    def __post_init__(self) -> None:
        S = np.asarray(self.S, dtype=np.float64)
        object.__setattr__(self, "S", S)
        if S.ndim != 3 or S.shape[1] != S.shape[2]:
            raise ConfigurationError("S must have shape (G, T, T)")
        if S.shape[1] < 1:
            raise ConfigurationError("S needs at least one step")
        if not np.all(np.isfinite(S)):
            raise ConfigurationError("S must be finite")
        if np.any(S < 0):
            raise ConfigurationError("drift values must be >= 0")
        lower = np.tril(np.ones(S.shape[1:], dtype=bool))
        if np.any(S[:, lower] != 0):
            raise ConfigurationError("S must be zero on and below the diagonal")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.num_runs < 1:
            raise ConfigurationError("num_runs must be >= 1")

    @property
    def num_groups(self) -> int:
        return self.S.shape[0]

    @property
    def num_steps(self) -> int:
        return self.S.shape[1]

    @property
    def delta(self) -> np.ndarray:
        """Adjacent-step drift, shape (G, T-1); entry [g, t-1] is delta_g(t)."""
        idx = np.arange(self.num_steps - 1)
        return self.S[:, idx, idx + 1]

    def delta_at(self, group: int, step: int) -> float:
        if not 0 <= group < self.num_groups:
            raise ConfigurationError(f"group index {group} out of range")
        if not 1 <= step < self.num_steps:
            raise ConfigurationError(f"step {step} has no adjacent drift")
        return float(self.S[group, step - 1, step])

    def summaries(self) -> tuple[GroupSummary, ...]:
        out = []
        for g in range(self.num_groups):
            row = self.delta[g]
            out.append(GroupSummary(float(row.mean()), float(row.std()),
                                    float(row.max())))
        return tuple(out)

    def to_json_dict(self) -> dict:
        return {
            "T": self.num_steps,
            "G": self.num_groups,
            "epsilon": self.epsilon,
            "num_runs": self.num_runs,
            "delta": self.delta.tolist(),
            "S": self.S.tolist(),
            "summary": [s.to_dict() for s in self.summaries()],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "StabilityMap":
        for key in ("T", "G", "epsilon", "S", "delta", "summary"):
            if key not in data:
                raise ConfigurationError(f"stability map json missing {key!r}")
        S = np.asarray(data["S"], dtype=np.float64)
        if S.shape != (data["G"], data["T"], data["T"]):
            raise ConfigurationError("S shape does not match T and G")
        smap = cls(S=S, epsilon=float(data["epsilon"]),
                   num_runs=int(data.get("num_runs", 1)))
        if not np.array_equal(np.asarray(data["delta"]), smap.delta):
            raise ConfigurationError("stored delta does not match S")
        stored = [
            GroupSummary(entry["mean"], entry["std"], entry["max"])
            for entry in data["summary"]
        ]
        if tuple(stored) != smap.summaries():
            raise ConfigurationError("stored summary does not match delta")
        return smap

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "StabilityMap":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _pairwise_matrix(states: np.ndarray, epsilon: float) -> np.ndarray:
    # states: (T, dim) for one group; returns (T, T) upper-triangular drift.
    num_steps = states.shape[0]
    diffs = np.linalg.norm(states[None, :, :] - states[:, None, :], axis=2)
    denom = np.maximum(np.linalg.norm(states, axis=1), epsilon)
    out = diffs / denom[None, :]
    return np.triu(out, k=1)


def build_stability_map(traces, epsilon: float = DEFAULT_EPSILON) -> StabilityMap:
    """Average pairwise drift over one or more runs.

    Args:
        traces: list of per-run group traces; each trace is a list over steps
            of per-group hidden states, as produced by ``run_full``.
    """
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    if not traces:
        raise ConfigurationError("need at least one trace")
    num_steps = len(traces[0])
    if num_steps < 1:
        raise ConfigurationError("traces must cover at least one step")
    num_groups = len(traces[0][0])
    total = np.zeros((num_groups, num_steps, num_steps))
    for trace in traces:
        if len(trace) != num_steps:
            raise ConfigurationError("traces have inconsistent step counts")
        for g in range(num_groups):
            try:
                states = np.stack([np.asarray(step[g], dtype=np.float64)
                                   for step in trace])
            except (IndexError, ValueError) as exc:
                raise ConfigurationError(f"bad trace for group {g}: {exc}") from exc
            total[g] += _pairwise_matrix(states, epsilon)
    return StabilityMap(S=total / len(traces), epsilon=epsilon,
                        num_runs=len(traces))


# ---------------------------------------------------------------------------
# Reference fixture: a hand-built map with one calm, one oscillating, and one
# spike-dominated group, pinned to the drift statistics below.
# ---------------------------------------------------------------------------

REFERENCE_GROUP_STATS = (
    GroupSummary(mean=0.1087, std=0.0781, max=0.3953),
    GroupSummary(mean=0.1815, std=0.0935, max=0.4387),
    GroupSummary(mean=0.1091, std=0.1434, max=0.6662),
)


def _fit_series(n: int, mean: float, std: float, pinned: dict[int, float],
                shape: np.ndarray) -> np.ndarray:
    """Series of length n with exact mean/std, pinned entries, free shape.

    The free entries are an affine image of ``shape`` (standardized to zero
    mean and unit population std), solved so the whole series lands exactly on
    the target statistics.
    """
    free_idx = [i for i in range(n) if i not in pinned]
    n_free = len(free_idx)
    if len(shape) != n_free:
        raise ConfigurationError("shape length does not match free entries")
    z = (shape - shape.mean()) / shape.std()
    pinned_vals = np.array(list(pinned.values()))
    m1 = (n * mean - pinned_vals.sum()) / n_free
    a_sq = (n * std ** 2 - np.sum((pinned_vals - mean) ** 2)) / n_free \
        - (m1 - mean) ** 2
    if a_sq <= 0:
        raise ConfigurationError("target stats are infeasible for this shape")
    series = np.empty(n)
    for idx, val in pinned.items():
        series[idx] = val
    series[free_idx] = m1 + np.sqrt(a_sq) * z
    if series.min() <= 0:
        raise ConfigurationError("fitted drift series is not strictly positive")
    if series.max() > max(pinned.values()) + 1e-12:
        raise ConfigurationError("fitted series exceeds its pinned maximum")
    return series


def _converging_pairwise(delta: np.ndarray) -> np.ndarray:
    """Pairwise drift for a settling group: alternating offsets that shrink.

    Positions p_t = (-1)^t e_t with e_t + e_{t-1} = delta_t keep the adjacent
    band exact while pairs far apart stay small, so long-range reuse looks
    cheap once the group has settled.
    """
    n = len(delta) + 1
    # e_t = (-1)^t e0 + q_t; choose e0 so every e_t stays positive.
    q = np.zeros(n)
    for t in range(1, n):
        q[t] = delta[t - 1] - q[t - 1]
    floor = 1e-4
    lo = max((floor - q[t] for t in range(0, n, 2)), default=floor)
    hi = min((q[t] - floor for t in range(1, n, 2)))
    if lo > hi:
        raise ConfigurationError("no feasible offset for the converging series")
    e0 = 0.5 * (lo + hi)
    e = np.array([q[t] + e0 if t % 2 == 0 else q[t] - e0 for t in range(n)])
    pos = np.where(np.arange(n) % 2 == 0, e, -e)
    out = np.abs(pos[None, :] - pos[:, None])
    return np.triu(out, k=1)


def _banded_pairwise(delta: np.ndarray) -> np.ndarray:
    """Pairwise drift for an oscillating group: a phase walk on a circle.

    Each step advances the phase by the arc matching its adjacent drift, with
    the sign chosen to pull the phase back toward zero. Chord lengths between
    any two steps stay bounded by the band width, never accumulating.
    """
    n = len(delta) + 1
    alpha = 2.0 * np.arcsin(delta / 2.0)
    theta = np.zeros(n)
    for t in range(1, n):
        sign = -1.0 if theta[t - 1] > 0 else 1.0
        theta[t] = theta[t - 1] + sign * alpha[t - 1]
    out = 2.0 * np.abs(np.sin((theta[None, :] - theta[:, None]) / 2.0))
    return np.triu(out, k=1)


def _accumulating_pairwise(delta: np.ndarray) -> np.ndarray:
    """Pairwise drift for a volatile group: every step moves somewhere new.

    Steps walk along mutually fresh directions on the unit sphere, so drift
    between s and t grows monotonically with the gap. Holding a stale state is
    never cheap for this group.
    """
    n = len(delta) + 1
    alpha = 2.0 * np.arcsin(delta / 2.0)
    log_cos = np.concatenate([[0.0], np.log(np.cos(alpha))])
    cum = np.cumsum(log_cos)
    # inner(s, t) = prod cos(alpha_u) over u in (s, t]
    inner = np.exp(cum[None, :] - cum[:, None])
    out = np.sqrt(np.maximum(2.0 - 2.0 * inner, 0.0))
    return np.triu(out, k=1)


def heterogeneity_fixture(num_steps: int = 50,
                          epsilon: float = DEFAULT_EPSILON) -> StabilityMap:
    """Reference three-group stability map for scheduler studies.

    Group 0 settles after an initial transient, group 1 oscillates inside a
    bounded band, and group 2 is spike-dominated with drift that accumulates
    over any gap. The adjacent-step statistics land exactly on
    ``REFERENCE_GROUP_STATS``.
    """
    if num_steps < 40:
        raise ConfigurationError("the reference fixture needs num_steps >= 40")
    n = num_steps - 1
    stats = REFERENCE_GROUP_STATS

    decay_shape = np.exp(-0.16 * np.arange(1, n))
    delta0 = _fit_series(n, stats[0].mean, stats[0].std, {0: stats[0].max},
                         decay_shape)

    peak_at = 7
    j = np.arange(n - 1)
    swing_shape = ((-1.0) ** j) * (1.0 + 0.25 * np.cos(2.0 * np.pi * j / 24.0))
    delta1 = _fit_series(n, stats[1].mean, stats[1].std,
                         {peak_at: stats[1].max}, swing_shape)

    spike_1 = int(round(num_steps * 17 / 50)) - 1
    spike_2 = int(round(num_steps * 33 / 50)) - 1
    side = 0.63
    k = np.arange(n - 3, dtype=np.float64)
    wobble = 0.08 * np.cos(2.0 * np.pi * k / 5.0)
    wobble[len(wobble) // 2] = 4.0
    delta2 = _fit_series(n, stats[2].mean, stats[2].std,
                         {0: stats[2].max, spike_1: side, spike_2: side},
                         wobble)

    S = np.stack([
        _converging_pairwise(delta0),
        _banded_pairwise(delta1),
        _accumulating_pairwise(delta2),
    ])
    return StabilityMap(S=S, epsilon=epsilon, num_runs=1)
