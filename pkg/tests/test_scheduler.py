"""Scheduler oracles: hand-worked costs, errors, scores, and small instances.

Budget feasibility is checked in exact arithmetic (Fractions), never via the
float totals the Schedule reports.
"""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layercache.errors import (
    ConfigurationError,
    InfeasibleBudgetError,
    InstanceTooLargeError,
)
from layercache.profiler import StabilityMap, heterogeneity_fixture
from layercache.scheduler import (
    GroupCosts,
    Schedule,
    brute_force_solve,
    evenly_spaced_schedule,
    expand_monolithic,
    greedy_solve,
    last_computed_before,
    map_fingerprint,
    modeled_speedup,
    score,
    total_cost,
    total_error,
)


def random_map(rng: np.random.Generator, num_steps: int,
               num_groups: int) -> StabilityMap:
    """Random upper-triangular drift map for property tests."""
    S = rng.uniform(0.0, 1.0, size=(num_groups, num_steps, num_steps))
    S = np.triu(S, k=1)
    return StabilityMap(S=S)


def exact_cost(d: np.ndarray, costs: GroupCosts) -> Fraction:
    total = Fraction(0)
    for g in range(d.shape[1]):
        total += int(d[:, g].sum()) * Fraction(costs.costs[g]).limit_denominator(10**9)
    return total


# ---------------------------------------------------------------------------
# costs and bookkeeping


def test_group_costs_validation():
    eq = GroupCosts.equal(3)
    assert np.allclose(eq.costs, 1.0 / 3.0)
    assert np.allclose(eq.weights, 1.0)

    by_layers = GroupCosts.from_layer_counts([2, 24, 50])
    assert np.allclose(by_layers.costs, np.array([2, 24, 50]) / 76.0)

    with pytest.raises(ConfigurationError):
        GroupCosts(costs=np.array([0.5, 0.6]), weights=np.array([1.0, 1.0]))
    with pytest.raises(ConfigurationError):
        GroupCosts(costs=np.array([0.5, 0.5]), weights=np.array([1.0, -1.0]))
    with pytest.raises(ConfigurationError):
        GroupCosts(costs=np.array([0.5, 0.5]), weights=np.array([1.0]))


def test_last_computed_before_hand_case():
    d = np.array([[1, 1],
                  [0, 1],
                  [1, 0],
                  [0, 0]])
    prev = last_computed_before(d)
    assert prev[1, 0] == 0 and prev[1, 1] == 0
    assert prev[2, 0] == 0 and prev[2, 1] == 1
    assert prev[3, 0] == 2 and prev[3, 1] == 1


def test_total_cost_hand_values():
    costs = GroupCosts.equal(3)
    full = np.ones((50, 3), dtype=np.int64)
    assert total_cost(full, costs) == pytest.approx(50.0)

    first_only = np.zeros((50, 3), dtype=np.int64)
    first_only[0] = 1
    assert total_cost(first_only, costs) == pytest.approx(1.0)

    # One cheap group recomputed twice, one 24 times, one every step; with
    # equal per-group cost the total is (2 + 24 + 50) / 3 full passes.
    mixed = np.zeros((50, 3), dtype=np.int64)
    mixed[0] = 1
    mixed[25, 0] = 1
    mixed[: 24, 1] = 1
    mixed[:, 2] = 1
    assert total_cost(mixed, costs) == pytest.approx(76.0 / 3.0)


def test_total_error_hand_value():
    S = np.zeros((1, 3, 3))
    S[0, 0, 1] = 0.2
    S[0, 0, 2] = 0.7
    S[0, 1, 2] = 0.4
    smap = StabilityMap(S=S)
    assert total_error(np.array([[1], [0], [1]]), smap) == pytest.approx(0.2)
    assert total_error(np.array([[1], [0], [0]]), smap) == pytest.approx(0.9)
    assert total_error(np.array([[1], [1], [1]]), smap) == 0.0


def test_score_hand_value():
    assert score(0.5, 1.0, 1.0 / 3.0, gamma=4.0) == pytest.approx(0.1875)
    assert score(0.0, 1.0, 0.5, gamma=4.0) == 0.0
    with pytest.raises(ConfigurationError):
        score(0.5, 1.0, 0.0)
    with pytest.raises(ConfigurationError):
        score(0.5, 1.0, 0.5, gamma=0.0)


# ---------------------------------------------------------------------------
# greedy solver


def test_greedy_full_budget_computes_everything():
    smap = random_map(np.random.default_rng(0), 6, 2)
    plan = greedy_solve(smap, 6)
    assert np.all(plan.d == 1)
    assert plan.total_error == 0.0
    assert plan.total_cost == pytest.approx(6.0)


def test_greedy_minimal_budget_keeps_only_the_first_step():
    smap = random_map(np.random.default_rng(1), 6, 3)
    plan = greedy_solve(smap, 1)
    expected = np.zeros((6, 3), dtype=np.int64)
    expected[0] = 1
    assert np.array_equal(plan.d, expected)


def test_greedy_rejects_budget_below_first_step():
    smap = random_map(np.random.default_rng(2), 5, 2)
    with pytest.raises(InfeasibleBudgetError):
        greedy_solve(smap, 0.5)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000),
       num_steps=st.integers(2, 8),
       num_groups=st.integers(1, 3),
       budget_frac=st.fractions(min_value=0, max_value=1))
def test_greedy_never_exceeds_the_budget(seed, num_steps, num_groups,
                                         budget_frac):
    smap = random_map(np.random.default_rng(seed), num_steps, num_groups)
    budget = Fraction(1) + budget_frac * (num_steps - 1)
    costs = GroupCosts.equal(num_groups)
    plan = greedy_solve(smap, budget, costs)
    spent = sum(int(plan.d[:, g].sum()) * Fraction(1, num_groups)
                for g in range(num_groups))
    assert spent <= budget
    assert np.all(plan.d[0] == 1)


def test_greedy_error_is_monotone_in_budget():
    smap = random_map(np.random.default_rng(3), 8, 3)
    budgets = [1, 1.5, 2, 3, 4.5, 5, 6, 7, 8]
    errors = [greedy_solve(smap, b).total_error for b in budgets]
    for lo, hi in zip(errors[1:], errors[:-1]):
        assert lo <= hi + 1e-12
    assert errors[-1] == 0.0


def test_greedy_invariant_to_common_weight_scaling():
    smap = random_map(np.random.default_rng(4), 7, 3)
    base = GroupCosts(costs=np.full(3, 1.0 / 3.0), weights=np.ones(3))
    scaled = GroupCosts(costs=np.full(3, 1.0 / 3.0), weights=np.full(3, 5.0))
    assert np.array_equal(greedy_solve(smap, 3.0, base).d,
                          greedy_solve(smap, 3.0, scaled).d)


def test_greedy_ties_resolve_to_earliest_step_then_lowest_group():
    # A perfectly uniform map scores every candidate cell identically, so
    # assignment order is pure tie-breaking.
    S = np.triu(np.full((2, 3, 3), 0.25), k=1)
    smap = StabilityMap(S=S)
    one_cell = greedy_solve(smap, Fraction(3, 2))
    assert np.array_equal(one_cell.d, np.array([[1, 1], [1, 0], [0, 0]]))
    two_cells = greedy_solve(smap, 2)
    assert np.array_equal(two_cells.d, np.array([[1, 1], [1, 1], [0, 0]]))


def test_greedy_rescoring_tracks_the_updated_frontier():
    # Computing (t=1, g=0) collapses the drift behind (t=2, g=0); a solver
    # that kept stale scores would spend its last slot there instead of on
    # group 1's genuinely drifting cell.
    S = np.zeros((2, 3, 3))
    S[0, 0, 1] = 0.9
    S[0, 0, 2] = 0.8
    S[0, 1, 2] = 0.05
    S[1, 0, 1] = 0.3
    S[1, 0, 2] = 0.5
    S[1, 1, 2] = 0.4
    smap = StabilityMap(S=S)
    plan = greedy_solve(smap, 2, gamma=1.0)
    assert np.array_equal(plan.d, np.array([[1, 1], [1, 0], [0, 1]]))
    assert plan.total_error == pytest.approx(0.05 + 0.3)


# ---------------------------------------------------------------------------
# exhaustive reference and baselines


def test_brute_force_is_never_worse_than_greedy():
    rng = np.random.default_rng(7)
    for _ in range(30):
        num_steps = int(rng.integers(3, 8))
        num_groups = int(rng.integers(1, 4))
        if num_steps * num_groups > 21:
            num_groups = 2
        smap = random_map(rng, num_steps, num_groups)
        budget = float(rng.uniform(1.0, num_steps))
        brute = brute_force_solve(smap, budget)
        greedy = greedy_solve(smap, budget)
        assert brute.total_error <= greedy.total_error + 1e-12
        costs = GroupCosts.equal(num_groups)
        assert exact_cost(brute.d, costs) <= Fraction(budget)
        assert np.all(brute.d[0] == 1)


def test_both_solvers_catch_an_isolated_spike():
    S = np.triu(np.full((1, 5, 5), 0.01), k=1)
    S[0, :3, 3] = 5.0
    smap = StabilityMap(S=S)
    assert brute_force_solve(smap, 2).d[3, 0] == 1
    assert greedy_solve(smap, 2).d[3, 0] == 1


def test_brute_force_guards_against_large_instances():
    smap = random_map(np.random.default_rng(8), 13, 2)
    with pytest.raises(InstanceTooLargeError):
        brute_force_solve(smap, 5)


def test_evenly_spaced_baseline_layout():
    smap = random_map(np.random.default_rng(9), 10, 2)
    plan = evenly_spaced_schedule(smap, 4)
    rows = np.flatnonzero(plan.d[:, 0])
    assert np.array_equal(rows, np.array([0, 3, 6, 9]))
    assert np.array_equal(plan.d[:, 0], plan.d[:, 1])
    assert plan.total_cost == pytest.approx(4.0)

    single = evenly_spaced_schedule(smap, 1.5)
    assert np.array_equal(np.flatnonzero(single.d[:, 0]), np.array([0]))


# ---------------------------------------------------------------------------
# Schedule bookkeeping and serialization


def test_k_values_are_gaps_to_the_last_computed_step():
    rng = np.random.default_rng(10)
    smap = random_map(rng, 9, 3)
    d = (rng.uniform(size=(9, 3)) < 0.5).astype(np.int64)
    d[0] = 1
    plan = Schedule.from_decisions(d, smap, GroupCosts.equal(3))
    for g in range(3):
        last = 0
        for t in range(1, 9):
            if d[t, g] == 1:
                assert plan.k_values[t, g] == 0
                last = t
            else:
                assert plan.k_values[t, g] == t - last
    assert np.all(plan.k_values[0] == 0)


def test_cache_rate_counts_cached_rows():
    smap = random_map(np.random.default_rng(11), 4, 2)
    d = np.array([[1, 1], [0, 1], [0, 1], [1, 1]])
    plan = Schedule.from_decisions(d, smap, GroupCosts.equal(2))
    assert plan.cache_rate(0) == pytest.approx(0.5)
    assert plan.cache_rate(1) == 0.0


def test_schedule_round_trip_is_byte_identical(tmp_path):
    smap = random_map(np.random.default_rng(12), 8, 3)
    plan = greedy_solve(smap, 4.5)
    first = tmp_path / "plan.json"
    second = tmp_path / "again.json"
    plan.save(first)
    Schedule.load(first).save(second)
    assert first.read_bytes() == second.read_bytes()

    payload = plan.to_json_dict()
    assert list(payload.keys()) == ["step_decisions", "k_values",
                                    "total_cost", "total_error"]


def test_schedule_load_rejects_tampering(tmp_path):
    import json

    smap = random_map(np.random.default_rng(13), 6, 2)
    plan = greedy_solve(smap, 3)
    path = tmp_path / "plan.json"
    plan.save(path)
    data = json.loads(path.read_text())

    bad_k = {**data, "k_values": [list(row) for row in data["k_values"]]}
    bad_k["k_values"][2][0] += 1
    with pytest.raises(ConfigurationError):
        Schedule.from_json_dict(bad_k)

    missing = {k: v for k, v in data.items() if k != "total_cost"}
    with pytest.raises(ConfigurationError):
        Schedule.from_json_dict(missing)

    extra = {**data, "solver": "greedy"}
    with pytest.raises(ConfigurationError):
        Schedule.from_json_dict(extra)

    headless = {**data,
                "step_decisions": [[False, False]] + data["step_decisions"][1:]}
    with pytest.raises(ConfigurationError):
        Schedule.from_json_dict(headless)


def test_expand_monolithic_broadcasts_a_whole_network_plan():
    velocity = StabilityMap(S=np.triu(np.full((1, 4, 4), 0.3), k=1))
    group_map = random_map(np.random.default_rng(14), 4, 3)
    mono = greedy_solve(velocity, 2)
    costs = GroupCosts.equal(3)
    wide = expand_monolithic(mono, 3, costs, group_map=group_map)
    assert wide.d.shape == (4, 3)
    for g in range(3):
        assert np.array_equal(wide.d[:, g], mono.d[:, 0])
    assert wide.total_cost == pytest.approx(mono.total_cost)
    assert wide.total_error == pytest.approx(total_error(wide.d, group_map))

    with pytest.raises(ConfigurationError):
        expand_monolithic(wide, 3, costs)


def test_modeled_speedup_examples():
    smap = random_map(np.random.default_rng(15), 4, 2)
    assert modeled_speedup(greedy_solve(smap, 4)) == pytest.approx(1.0)
    assert modeled_speedup(greedy_solve(smap, 2)) == pytest.approx(2.0)


def test_map_fingerprint_is_stable_and_content_sensitive():
    smap = random_map(np.random.default_rng(16), 5, 2)
    again = StabilityMap(S=smap.S.copy())
    assert map_fingerprint(smap) == map_fingerprint(again)
    S = smap.S.copy()
    S[0, 0, 1] += 0.001
    assert map_fingerprint(StabilityMap(S=S)) != map_fingerprint(smap)


def test_fixture_map_budget_25_orders_the_groups():
    plan = greedy_solve(heterogeneity_fixture(), 25.0, gamma=4.0)
    rates = [plan.cache_rate(g) for g in range(3)]
    assert rates[0] > rates[1] > rates[2]
    assert rates[2] == 0.0
