"""Flow-matching Euler sampler with optional per-group caching.

``run_full`` integrates dx/dsigma = v(x, sigma) with explicit Euler steps and
keeps the per-group hidden trace that the profiler consumes. ``run_cached``
replays the same integration under a schedule that marks, per step and group,
whether the group is recomputed or reconstructed from committed history.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError
from .estimator import AdaptiveKPolicy, adaptive_k, group_estimate, meancache_estimate
from .model import SyntheticModel

# Action tags used in step events.
COMPUTED = "computed"
ESTIMATED = "estimated"
FALLBACK = "fallback"

# Group index used in events that concern the whole network (meancache mode).
WHOLE_NET = -1

MODES = ("layercache", "meancache")


@dataclass(frozen=True)
class SigmaSchedule:
    """Strictly decreasing noise levels; T steps means T+1 values."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or len(values) < 2:
            raise ConfigurationError("sigma schedule needs at least two values")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("sigma schedule must be finite")
        if not np.all(np.diff(values) < 0):
            raise ConfigurationError("sigma schedule must be strictly decreasing")
        if values[0] <= 0 or values[-1] < 0:
            raise ConfigurationError("sigma schedule must start above 0 and end at >= 0")

    @property
    def num_steps(self) -> int:
        return len(self.values) - 1


def linear_sigma_schedule(num_steps: int, sigma_max: float = 1.0,
                          sigma_min: float = 0.0) -> SigmaSchedule:
    if num_steps < 1:
        raise ConfigurationError("num_steps must be >= 1")
    return SigmaSchedule(np.linspace(sigma_max, sigma_min, num_steps + 1))


def euler_step(x: np.ndarray, velocity: np.ndarray, sigma_t: float,
               sigma_next: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if x.shape != velocity.shape:
        raise ConfigurationError("state and velocity shapes differ")
    if not sigma_next < sigma_t:
        raise ConfigurationError(
            f"sigma must decrease across a step, got {sigma_t} -> {sigma_next}")
    out = x + (sigma_next - sigma_t) * velocity
    if not np.all(np.isfinite(out)):
        raise NumericError(f"euler step produced non-finite values at sigma={sigma_t}")
    return out


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    sigma: float
    hidden: np.ndarray


class GroupHistory:
    """Per-group ring of committed hidden states, newest last."""

    def __init__(self, num_groups: int, capacity: int = 8):
        if num_groups < 1:
            raise ConfigurationError("num_groups must be >= 1")
        if capacity < 2:
            raise ConfigurationError("history capacity must be >= 2")
        self.capacity = capacity
        self._records: list[list[HistoryRecord]] = [[] for _ in range(num_groups)]

    @property
    def num_groups(self) -> int:
        return len(self._records)

    def commit(self, group: int, step: int, sigma: float, hidden: np.ndarray) -> None:
        if not 0 <= group < self.num_groups:
            raise ConfigurationError(f"group index {group} out of range")
        bucket = self._records[group]
        if bucket:
            last = bucket[-1]
            if step <= last.step:
                raise ConfigurationError("history steps must strictly increase")
            if sigma >= last.sigma:
                raise ConfigurationError("history sigmas must strictly decrease")
            if hidden.shape != last.hidden.shape:
                raise ConfigurationError("hidden state shape changed between commits")
        bucket.append(HistoryRecord(step, float(sigma), np.array(hidden, copy=True)))
        if len(bucket) > self.capacity:
            bucket.pop(0)

    def records(self, group: int) -> tuple[HistoryRecord, ...]:
        if not 0 <= group < self.num_groups:
            raise ConfigurationError(f"group index {group} out of range")
        return tuple(self._records[group])


@dataclass
class FullRun:
    trajectory: list[np.ndarray]
    group_trace: list[list[np.ndarray]]
    velocities: list[np.ndarray]

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]


def run_full(model: SyntheticModel, schedule: SigmaSchedule, x0: np.ndarray) -> FullRun:
    """Integrate with every group computed at every step."""
    x = np.asarray(x0, dtype=np.float64)
    trajectory = [x]
    group_trace: list[list[np.ndarray]] = []
    velocities: list[np.ndarray] = []
    sigmas = schedule.values
    for t in range(schedule.num_steps):
        velocity, hiddens = model.forward(x, float(sigmas[t]))
        group_trace.append(hiddens)
        velocities.append(velocity)
        x = euler_step(x, velocity, float(sigmas[t]), float(sigmas[t + 1]))
        trajectory.append(x)
    return FullRun(trajectory, group_trace, velocities)


@dataclass(frozen=True)
class StepEvent:
    """What happened to one group at one step of a cached run."""

    step: int
    group: int
    action: str
    span: int = 0
    clamped: bool = False
    substitution_error: float | None = None


@dataclass
class CachedRun:
    trajectory: list[np.ndarray]
    events: list[StepEvent] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]

    def count(self, action: str) -> int:
        return sum(1 for ev in self.events if ev.action == action)


def _validate_plan(decisions: np.ndarray, num_steps: int, num_groups: int,
                   mode: str) -> np.ndarray:
    d = np.asarray(decisions)
    if d.shape != (num_steps, num_groups):
        raise ConfigurationError(
            f"plan shape {d.shape} does not match ({num_steps}, {num_groups})"
        )
    if not np.all((d == 0) | (d == 1)):
        raise ConfigurationError("plan entries must be 0 or 1")
    if not np.all(d[0] == 1):
        raise ConfigurationError("the first step must compute every group")
    if mode == "meancache":
        row_sums = d.sum(axis=1)
        if not np.all((row_sums == 0) | (row_sums == num_groups)):
            raise ConfigurationError("meancache plans must cache whole steps")
    return d.astype(np.int64)


def run_cached(
    model: SyntheticModel,
    schedule: SigmaSchedule,
    x0: np.ndarray,
    plan,
    policy: AdaptiveKPolicy | None = None,
    stability=None,
    mode: str = "layercache",
    record_substitution_errors: bool = False,
) -> CachedRun:
    """Integrate under a caching plan.

    Cached groups are reconstructed by first-order extrapolation over committed
    history, with the span chosen from the profiled drift in ``stability``
    (a group-level map for layercache, a one-group velocity map for meancache).
    A cached cell without at least two committed records falls back to
    computing the group and logs a ``fallback`` event.

    Args:
        plan: a Schedule or any object with a ``(T, G)`` ``d`` attribute.
        policy: span thresholds; defaults to :class:`AdaptiveKPolicy`.
        stability: profiled drift map; required whenever any cell is cached.
        mode: ``layercache`` (per-group hidden caching) or ``meancache``
            (whole-network velocity caching).
        record_substitution_errors: when True, estimated cells also compute
            the true group output on the same upstream input and record the
            L2 gap on the event. Diagnostic only; slows the run down.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if policy is None:
        policy = AdaptiveKPolicy()
    decisions = _validate_plan(getattr(plan, "d", plan), schedule.num_steps,
                               model.num_groups, mode)
    any_cached = bool(np.any(decisions == 0))
    if any_cached and stability is None:
        raise ConfigurationError("a stability map is required when cells are cached")
    if stability is not None and stability.num_steps != schedule.num_steps:
        raise ConfigurationError("stability map step count does not match the schedule")
    if stability is not None:
        want_groups = model.num_groups if mode == "layercache" else 1
        if stability.num_groups != want_groups:
            raise ConfigurationError(
                f"stability map has {stability.num_groups} groups, expected {want_groups}"
            )

    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (model.state_dim,):
        raise ConfigurationError(f"x0 must have shape ({model.state_dim},)")
    sigmas = schedule.values
    trajectory = [x]
    events: list[StepEvent] = []
    history = GroupHistory(model.num_groups, capacity=policy.k_max + 1)
    velocity_history: list[tuple[float, np.ndarray]] = []

    for t in range(schedule.num_steps):
        sigma_t = float(sigmas[t])
        if mode == "layercache":
            h = x
            for g in range(model.num_groups):
                if decisions[t, g] == 1:
                    h = model.group_forward(g, h, sigma_t)
                    history.commit(g, t, sigma_t, h)
                    events.append(StepEvent(t, g, COMPUTED))
                    continue
                records = history.records(g)
                if len(records) < 2:
                    h = model.group_forward(g, h, sigma_t)
                    history.commit(g, t, sigma_t, h)
                    events.append(StepEvent(t, g, FALLBACK))
                    continue
                span = adaptive_k(stability.delta_at(g, t), policy)
                clamped = span > len(records) - 1
                if clamped:
                    span = len(records) - 1
                sub_err = None
                if record_substitution_errors:
                    truth = model.group_forward(g, h, sigma_t)
                estimate = group_estimate(history, g, sigma_t, records[-1].sigma, span)
                if record_substitution_errors:
                    sub_err = float(np.linalg.norm(estimate - truth))
                h = estimate
                events.append(StepEvent(t, g, ESTIMATED, span=span, clamped=clamped,
                                        substitution_error=sub_err))
            velocity = model.velocity_from_hidden(h)
        else:
            if decisions[t, 0] == 1:
                velocity, _ = model.forward(x, sigma_t)
                velocity_history.append((sigma_t, velocity))
                events.append(StepEvent(t, WHOLE_NET, COMPUTED))
            elif len(velocity_history) < 2:
                velocity, _ = model.forward(x, sigma_t)
                velocity_history.append((sigma_t, velocity))
                events.append(StepEvent(t, WHOLE_NET, FALLBACK))
            else:
                span = adaptive_k(stability.delta_at(0, t), policy)
                clamped = span > len(velocity_history)
                velocity = meancache_estimate(velocity_history, span, sigma_t)
                events.append(StepEvent(t, WHOLE_NET, ESTIMATED,
                                        span=min(span, len(velocity_history)),
                                        clamped=clamped))
        x = euler_step(x, velocity, sigma_t, float(sigmas[t + 1]))
        trajectory.append(x)

    return CachedRun(trajectory, events)
