"""Budgeted selection of which groups to recompute at which steps.

A schedule is a T x G binary matrix d: d[t][g] = 1 means group g is computed
at step t, 0 means it is reconstructed from cache. The solvers trade the
budget (in full-pass units, where a whole step costs the sum of the group
cost fractions) against the drift a stale state would carry, as recorded in a
:class:`~layercache.profiler.StabilityMap`.

Budget arithmetic runs on exact fractions so that feasibility checks never
wobble with float rounding; reported totals are floats.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    InfeasibleBudgetError,
    InstanceTooLargeError,
)
from .profiler import StabilityMap

DEFAULT_GAMMA = 4.0

# Exhaustive search is kept for desk-scale cross-checks only.
BRUTE_FORCE_CELL_LIMIT = 24


@dataclass(frozen=True)
class GroupCosts:
    """Per-group compute cost fractions (summing to 1) and scoring weights."""

    costs: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        costs = np.asarray(self.costs, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "weights", weights)
        if costs.ndim != 1 or len(costs) < 1:
            raise ConfigurationError("costs must be a 1-D vector")
        if weights.shape != costs.shape:
            raise ConfigurationError("weights must match costs in length")
        if np.any(costs <= 0) or np.any(weights <= 0):
            raise ConfigurationError("costs and weights must be positive")
        if abs(float(costs.sum()) - 1.0) > 1e-9:
            raise ConfigurationError("costs must sum to 1")

    @property
    def num_groups(self) -> int:
        return len(self.costs)

    @classmethod
    def equal(cls, num_groups: int) -> "GroupCosts":
        if num_groups < 1:
            raise ConfigurationError("num_groups must be >= 1")
        return cls(np.full(num_groups, 1.0 / num_groups), np.ones(num_groups))

    @classmethod
    def from_layer_counts(cls, counts, weights=None) -> "GroupCosts":
        counts = np.asarray(counts, dtype=np.float64)
        if np.any(counts <= 0):
            raise ConfigurationError("layer counts must be positive")
        if weights is None:
            weights = np.ones(len(counts))
        return cls(counts / counts.sum(), np.asarray(weights, dtype=np.float64))


def _fractions(costs: GroupCosts) -> list[Fraction]:
    return [Fraction(float(c)) for c in costs.costs]


def last_computed_before(d: np.ndarray) -> np.ndarray:
    """For each cell, the most recent step < t where that group was computed.

    Row 0 is always computed, so the result is well defined for t >= 1; row 0
    of the output is set to -1 and must not be consulted.
    """
    num_steps, num_groups = d.shape
    steps = np.arange(num_steps)[:, None]
    marked = np.where(d == 1, steps, -1)
    latest = np.maximum.accumulate(marked, axis=0)
    out = np.empty_like(latest)
    out[0] = -1
    out[1:] = latest[:-1]
    return out


def total_cost(d: np.ndarray, costs: GroupCosts) -> float:
    d = np.asarray(d)
    if d.shape[1] != costs.num_groups:
        raise ConfigurationError("decision matrix does not match costs")
    total = Fraction(0)
    fracs = _fractions(costs)
    for g in range(costs.num_groups):
        total += fracs[g] * int(d[:, g].sum())
    return float(total)


def total_error(d: np.ndarray, smap: StabilityMap) -> float:
    d = np.asarray(d)
    if d.shape != (smap.num_steps, smap.num_groups):
        raise ConfigurationError("decision matrix does not match the map")
    prev = last_computed_before(d)
    total = 0.0
    for g in range(smap.num_groups):
        for t in range(1, smap.num_steps):
            if d[t, g] == 0:
                total += smap.S[g, prev[t, g], t]
    return total


def score(drift: float, weight: float, cost: float,
          gamma: float = DEFAULT_GAMMA) -> float:
    """Benefit-per-cost of recomputing a cell whose stale drift is ``drift``."""
    if cost <= 0:
        raise ConfigurationError("cost must be positive")
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    return weight * drift ** gamma / cost


@dataclass
class Schedule:
    """A solved plan plus its bookkeeping totals."""

    d: np.ndarray
    k_values: np.ndarray
    total_cost: float
    total_error: float
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_decisions(cls, d: np.ndarray, smap: StabilityMap,
                       costs: GroupCosts, meta: dict | None = None) -> "Schedule":
        d = np.asarray(d, dtype=np.int64)
        if d.shape != (smap.num_steps, smap.num_groups):
            raise ConfigurationError("decision matrix does not match the map")
        if not np.all(d[0] == 1):
            raise ConfigurationError("the first step must compute every group")
        prev = last_computed_before(d)
        steps = np.arange(smap.num_steps)[:, None]
        k_values = np.where(d == 1, 0, steps - prev)
        k_values[0] = 0
        return cls(d=d, k_values=k_values.astype(np.int64),
                   total_cost=total_cost(d, costs),
                   total_error=total_error(d, smap),
                   meta=dict(meta or {}))

    @property
    def num_steps(self) -> int:
        return self.d.shape[0]

    @property
    def num_groups(self) -> int:
        return self.d.shape[1]

    def cache_rate(self, group: int) -> float:
        """Fraction of steps where the group is reconstructed from cache."""
        col = self.d[:, group]
        return float((col == 0).sum() / len(col))

    def to_json_dict(self) -> dict:
        return {
            "step_decisions": [[bool(v) for v in row] for row in self.d],
            "k_values": [[int(v) for v in row] for row in self.k_values],
            "total_cost": float(self.total_cost),
            "total_error": float(self.total_error),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Schedule":
        expected = {"step_decisions", "k_values", "total_cost", "total_error"}
        if set(data.keys()) != expected:
            raise ConfigurationError(
                f"schedule json must contain exactly {sorted(expected)}"
            )
        d = np.asarray(data["step_decisions"], dtype=np.int64)
        if d.ndim != 2:
            raise ConfigurationError("step_decisions must be a T x G matrix")
        if not np.all(d[0] == 1):
            raise ConfigurationError("the first step must compute every group")
        prev = last_computed_before(d)
        steps = np.arange(d.shape[0])[:, None]
        expected_k = np.where(d == 1, 0, steps - prev)
        expected_k[0] = 0
        k_values = np.asarray(data["k_values"], dtype=np.int64)
        if k_values.shape != d.shape or not np.array_equal(k_values, expected_k):
            raise ConfigurationError("k_values are inconsistent with step_decisions")
        return cls(d=d, k_values=k_values,
                   total_cost=float(data["total_cost"]),
                   total_error=float(data["total_error"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Schedule":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _check_budget(budget, costs: GroupCosts) -> tuple[Fraction, Fraction]:
    frac_budget = Fraction(budget) if not isinstance(budget, float) \
        else Fraction(budget)
    base = sum(_fractions(costs), Fraction(0))
    if frac_budget < base:
        raise InfeasibleBudgetError(
            f"budget {float(frac_budget)} cannot cover the mandatory first step "
            f"(cost {float(base)})"
        )
    return frac_budget, base


def greedy_solve(smap: StabilityMap, budget, costs: GroupCosts | None = None,
                 gamma: float = DEFAULT_GAMMA) -> Schedule:
    """Assign compute cells one at a time by benefit-per-cost.

    Starts from everything cached except step 0, then repeatedly computes the
    cell with the highest ``weight * drift^gamma / cost`` among those that
    still fit the remaining budget, re-deriving drift against the updated
    cache frontier after every assignment. Ties go to the earliest step, then
    the lowest group index.
    """
    if costs is None:
        costs = GroupCosts.equal(smap.num_groups)
    if costs.num_groups != smap.num_groups:
        raise ConfigurationError("costs do not match the map's group count")
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    num_steps, num_groups = smap.num_steps, smap.num_groups
    frac_budget, base = _check_budget(budget, costs)
    remaining = frac_budget - base
    fracs = _fractions(costs)

    d = np.zeros((num_steps, num_groups), dtype=np.int64)
    d[0, :] = 1
    while True:
        best_score = 0.0
        best_cell = None
        for t in range(1, num_steps):
            for g in range(num_groups):
                if d[t, g] == 1 or fracs[g] > remaining:
                    continue
                prev = t - 1
                while d[prev, g] == 0:
                    prev -= 1
                cell_score = score(float(smap.S[g, prev, t]),
                                   float(costs.weights[g]),
                                   float(costs.costs[g]), gamma)
                if best_cell is None or cell_score > best_score:
                    best_score = cell_score
                    best_cell = (t, g)
        if best_cell is None:
            break
        t, g = best_cell
        d[t, g] = 1
        remaining -= fracs[g]

    meta = {"budget": float(frac_budget), "gamma": gamma,
            "map_fingerprint": map_fingerprint(smap)}
    return Schedule.from_decisions(d, smap, costs, meta)


def brute_force_solve(smap: StabilityMap, budget,
                      costs: GroupCosts | None = None) -> Schedule:
    """Exhaustive minimum-error schedule for desk-scale instances.

    The objective and the budget both decompose by group, so each group's
    best pattern for every compute count is found independently and the
    counts are then combined, which keeps the search exact.
    """
    if costs is None:
        costs = GroupCosts.equal(smap.num_groups)
    if costs.num_groups != smap.num_groups:
        raise ConfigurationError("costs do not match the map's group count")
    num_steps, num_groups = smap.num_steps, smap.num_groups
    if num_steps * num_groups > BRUTE_FORCE_CELL_LIMIT:
        raise InstanceTooLargeError(
            f"{num_steps}x{num_groups} exceeds the exhaustive search guard"
        )
    frac_budget, _ = _check_budget(budget, costs)
    fracs = _fractions(costs)

    # best_error[g][n]: lowest column error using n computed steps (step 0
    # included); best_pattern holds the matching column.
    best_error = [[np.inf] * (num_steps + 1) for _ in range(num_groups)]
    best_pattern = [[None] * (num_steps + 1) for _ in range(num_groups)]
    for g in range(num_groups):
        for mask in range(1 << (num_steps - 1)):
            col = np.zeros(num_steps, dtype=np.int64)
            col[0] = 1
            for bit in range(num_steps - 1):
                if mask >> bit & 1:
                    col[bit + 1] = 1
            err = 0.0
            prev = 0
            for t in range(1, num_steps):
                if col[t] == 1:
                    prev = t
                else:
                    err += float(smap.S[g, prev, t])
            n = int(col.sum())
            if err < best_error[g][n]:
                best_error[g][n] = err
                best_pattern[g][n] = col

    best_total = np.inf
    best_combo = None
    combo = [1] * num_groups
    while True:
        cost = sum(fracs[g] * combo[g] for g in range(num_groups))
        if cost <= frac_budget:
            err = sum(best_error[g][combo[g]] for g in range(num_groups))
            if err < best_total:
                best_total = err
                best_combo = tuple(combo)
        # advance the counts odometer
        pos = 0
        while pos < num_groups:
            combo[pos] += 1
            if combo[pos] <= num_steps:
                break
            combo[pos] = 1
            pos += 1
        if pos == num_groups:
            break

    d = np.stack([best_pattern[g][best_combo[g]] for g in range(num_groups)],
                 axis=1)
    meta = {"budget": float(frac_budget), "solver": "brute_force",
            "map_fingerprint": map_fingerprint(smap)}
    return Schedule.from_decisions(d, smap, costs, meta)


def evenly_spaced_schedule(smap: StabilityMap, budget,
                           costs: GroupCosts | None = None) -> Schedule:
    """Group-blind baseline: full recomputes at evenly spaced steps."""
    if costs is None:
        costs = GroupCosts.equal(smap.num_groups)
    frac_budget, _ = _check_budget(budget, costs)
    num_rows = min(int(frac_budget), smap.num_steps)
    idx = np.unique(np.round(np.linspace(0, smap.num_steps - 1,
                                         num_rows)).astype(int))
    d = np.zeros((smap.num_steps, smap.num_groups), dtype=np.int64)
    d[idx, :] = 1
    meta = {"budget": float(frac_budget), "solver": "evenly_spaced",
            "map_fingerprint": map_fingerprint(smap)}
    return Schedule.from_decisions(d, smap, costs, meta)


def expand_monolithic(plan: Schedule, num_groups: int, costs: GroupCosts,
                      group_map: StabilityMap | None = None) -> Schedule:
    """Broadcast a one-group (whole-network) plan across ``num_groups``.

    Used to evaluate velocity-level caching against the same runner as the
    group-level plans. Total error is re-derived on ``group_map`` when one is
    supplied; otherwise the original (velocity-map) error is carried over.
    """
    if plan.num_groups != 1:
        raise ConfigurationError("expected a one-group plan")
    if costs.num_groups != num_groups:
        raise ConfigurationError("costs do not match num_groups")
    d = np.repeat(plan.d, num_groups, axis=1)
    prev = last_computed_before(d)
    steps = np.arange(d.shape[0])[:, None]
    k_values = np.where(d == 1, 0, steps - prev)
    k_values[0] = 0
    if group_map is not None:
        err = total_error(d, group_map)
    else:
        err = plan.total_error
    return Schedule(d=d, k_values=k_values.astype(np.int64),
                    total_cost=total_cost(d, costs), total_error=err,
                    meta=dict(plan.meta))


def modeled_speedup(plan: Schedule) -> float:
    """Full-compute steps divided by the plan's cost, both in full-pass units."""
    if plan.total_cost <= 0:
        raise ConfigurationError("plan cost must be positive")
    return plan.num_steps / plan.total_cost


def map_fingerprint(smap: StabilityMap) -> str:
    payload = json.dumps(smap.to_json_dict(), sort_keys=True).encode()
    return hashlib.sha1(payload).hexdigest()[:12]
