"""End-to-end orchestration: profile a model, plan, replay, evaluate.

The CLI and the acceptance checks both drive this module, so its defaults are
the package defaults: 50 steps, 3 profiling runs, budgets in full-pass units.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .estimator import AdaptiveKPolicy
from .metrics import QualityReport, attribute_error, latent_image, psnr, ssim
from .model import SyntheticModel
from .profiler import DEFAULT_EPSILON, StabilityMap, build_stability_map
from .sampler import FullRun, SigmaSchedule, run_cached, run_full
from .scheduler import (
    GroupCosts,
    Schedule,
    expand_monolithic,
    greedy_solve,
    modeled_speedup,
)

DEFAULT_PROFILE_RUNS = 3
DEFAULT_PROFILE_SEED_BASE = 100
DEFAULT_BUDGETS = (15.0, 20.0, 25.0, 30.0, 35.0)
PLAN_MODES = ("layercache", "meancache")


def draw_x0(state_dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(state_dim)


def profile_model(model: SyntheticModel, schedule: SigmaSchedule,
                  num_runs: int = DEFAULT_PROFILE_RUNS,
                  seed_base: int = DEFAULT_PROFILE_SEED_BASE,
                  epsilon: float = DEFAULT_EPSILON,
                  ) -> tuple[StabilityMap, StabilityMap]:
    """Run the full sampler ``num_runs`` times and build both drift maps.

    Returns the per-group hidden-state map and the one-group velocity map
    (what a whole-network cache would key its spans on).
    """
    if num_runs < 1:
        raise ConfigurationError("need at least one profiling run")
    group_traces = []
    velocity_traces = []
    for i in range(num_runs):
        x0 = draw_x0(model.state_dim, seed_base + i)
        full = run_full(model, schedule, x0)
        group_traces.append(full.group_trace)
        velocity_traces.append([[v] for v in full.velocities])
    group_map = build_stability_map(group_traces, epsilon)
    velocity_map = build_stability_map(velocity_traces, epsilon)
    return group_map, velocity_map


def plan_for_mode(mode: str, group_map: StabilityMap,
                  velocity_map: StabilityMap, budget,
                  costs: GroupCosts | None = None,
                  gamma: float = 4.0) -> Schedule:
    """Solve a schedule with the mode's own view of the model."""
    if costs is None:
        costs = GroupCosts.equal(group_map.num_groups)
    if mode == "layercache":
        return greedy_solve(group_map, budget, costs, gamma)
    if mode == "meancache":
        mono = greedy_solve(velocity_map, budget, GroupCosts.equal(1), gamma)
        return expand_monolithic(mono, group_map.num_groups, costs, group_map)
    raise ConfigurationError(f"unknown planning mode {mode!r}")


def evaluate_plan(model: SyntheticModel, schedule: SigmaSchedule,
                  plan: Schedule, seed: int, mode: str,
                  group_map: StabilityMap, velocity_map: StabilityMap,
                  policy: AdaptiveKPolicy | None = None,
                  baseline: FullRun | None = None,
                  with_attribution: bool = True) -> QualityReport:
    """Replay a plan against the uncached baseline and score the final latent."""
    x0 = draw_x0(model.state_dim, seed)
    if baseline is None:
        baseline = run_full(model, schedule, x0)
    stability = group_map if mode == "layercache" else velocity_map
    replay = run_cached(model, schedule, x0, plan, policy=policy,
                        stability=stability, mode=mode)
    shape = model.config.latent_shape
    ref_img = latent_image(baseline.final, shape)
    out_img = latent_image(replay.final, shape)
    data_range = float(ref_img.max() - ref_img.min())
    psnr_db = psnr(ref_img, out_img, data_range=data_range)
    ssim_val = ssim(ref_img, out_img, data_range=data_range) \
        if ref_img.ndim == 2 and min(ref_img.shape) >= 7 else float("nan")
    if with_attribution:
        attr = attribute_error(model, schedule, x0, plan, policy=policy,
                               stability=group_map)
        attribution = [float(s) for s in attr.shares]
        flagged = attr.flagged
    else:
        attribution = [0.0] * plan.num_groups
        flagged = True
    return QualityReport(
        budget=float(plan.meta.get("budget", plan.total_cost)),
        mode=mode,
        psnr_db=psnr_db,
        ssim=ssim_val,
        modeled_speedup=modeled_speedup(plan),
        attribution=attribution,
        attribution_flagged=flagged,
    )


def sweep(model: SyntheticModel, schedule: SigmaSchedule,
          group_map: StabilityMap, velocity_map: StabilityMap,
          budgets=DEFAULT_BUDGETS, modes=PLAN_MODES, num_seeds: int = 3,
          seed_base: int = 0, costs: GroupCosts | None = None,
          gamma: float = 4.0, policy: AdaptiveKPolicy | None = None,
          with_attribution: bool = True) -> list[QualityReport]:
    """One averaged report per (budget, mode), over ``num_seeds`` replays."""
    if num_seeds < 1:
        raise ConfigurationError("need at least one sweep seed")
    baselines = {}
    for i in range(num_seeds):
        seed = seed_base + i
        x0 = draw_x0(model.state_dim, seed)
        baselines[seed] = run_full(model, schedule, x0)
    reports = []
    for budget in budgets:
        for mode in modes:
            plan = plan_for_mode(mode, group_map, velocity_map, budget,
                                 costs, gamma)
            per_seed = [
                evaluate_plan(model, schedule, plan, seed_base + i, mode,
                              group_map, velocity_map, policy,
                              baseline=baselines[seed_base + i],
                              with_attribution=with_attribution)
                for i in range(num_seeds)
            ]
            usable = [r for r in per_seed if not r.attribution_flagged]
            if usable:
                attribution = list(np.mean([r.attribution for r in usable],
                                           axis=0))
                flagged = False
            else:
                attribution = [0.0] * plan.num_groups
                flagged = True
            reports.append(QualityReport(
                budget=float(budget),
                mode=mode,
                psnr_db=float(np.mean([r.psnr_db for r in per_seed])),
                ssim=float(np.mean([r.ssim for r in per_seed])),
                modeled_speedup=per_seed[0].modeled_speedup,
                attribution=attribution,
                attribution_flagged=flagged,
            ))
    return reports


def sweep_csv(reports: list[QualityReport], num_groups: int) -> str:
    attrs = ",".join(f"attr_g{g}" for g in range(num_groups))
    lines = [f"budget,mode,psnr_db,ssim,modeled_speedup,{attrs}"]
    for rep in reports:
        attr_cells = ",".join(f"{a:.6f}" for a in rep.attribution)
        lines.append(
            f"{rep.budget:g},{rep.mode},{rep.psnr_db:.4f},{rep.ssim:.6f},"
            f"{rep.modeled_speedup:.4f},{attr_cells}"
        )
    return "\n".join(lines) + "\n"
