"""Command-line harness around profiling, planning, replay, and reporting.

Subcommands
-----------
profile    run seeded full trajectories and write the drift maps
schedule   turn a drift map into a budgeted compute/cache plan
run        replay a plan against the uncached baseline and score it
sweep      grid of budgets x modes, one CSV row per cell
attribute  per-group shares of the final-latent error for one plan

Every command accepts ``--config FILE`` holding JSON whose keys match the long
flag names (dashes become underscores); explicitly passed flags win over the
file. All outputs are deterministic functions of (config, seeds): rerunning a
command reproduces its files byte for byte.

Exit status: 0 when every requested output was written, 2 for configuration
or input-file problems, 3 for an infeasible budget, 4 for numeric failures,
1 for any other library error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    InfeasibleBudgetError,
    LayerCacheError,
    NumericError,
)
from .estimator import AdaptiveKPolicy
from .metrics import QualityReport, attribute_error
from .model import ModelConfig, SyntheticModel, default_heterogeneous_config
from .pipeline import (
    DEFAULT_BUDGETS,
    DEFAULT_PROFILE_RUNS,
    DEFAULT_PROFILE_SEED_BASE,
    PLAN_MODES,
    draw_x0,
    evaluate_plan,
    plan_for_mode,
    profile_model,
)
from .profiler import StabilityMap
from .sampler import linear_sigma_schedule
from .scheduler import (
    DEFAULT_GAMMA,
    GroupCosts,
    Schedule,
    greedy_solve,
    modeled_speedup,
)

RUN_MODES = ("layercache", "meancache", "full")


def _fingerprint(obj) -> str:
    payload = json.dumps(obj, sort_keys=True).encode()
    return hashlib.sha1(payload).hexdigest()[:12]


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad numeric list {text!r}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad integer list {text!r}") from exc


def _settings(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, then the optional config file, then explicit flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigurationError(
                f"config file {path} has unknown keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _build_model(settings: dict) -> SyntheticModel:
    path = settings.get("model_config")
    if path:
        if not Path(path).is_file():
            raise ConfigurationError(f"model config not found: {path}")
        config = ModelConfig.load(path)
    else:
        config = default_heterogeneous_config()
    return SyntheticModel(config)


def _policy(settings: dict) -> AdaptiveKPolicy:
    thresholds = settings["k_thresholds"]
    spans = settings["k_spans"]
    if isinstance(thresholds, str):
        thresholds = _floats(thresholds)
    if isinstance(spans, str):
        spans = _ints(spans)
    if len(thresholds) != 2 or len(spans) != 3:
        raise ConfigurationError("need 2 span thresholds and 3 span sizes")
    return AdaptiveKPolicy(tau_low=thresholds[0], tau_high=thresholds[1],
                           k_max=spans[0], k_mid=spans[1], k_min=spans[2])


def _costs(settings: dict, num_groups: int) -> GroupCosts:
    costs = settings.get("costs")
    weights = settings.get("weights")
    if isinstance(costs, str):
        costs = _floats(costs)
    if isinstance(weights, str):
        weights = _floats(weights)
    if costs is None:
        base = GroupCosts.equal(num_groups)
        if weights is None:
            return base
        return GroupCosts(base.costs, np.asarray(weights, dtype=np.float64))
    costs = np.asarray(costs, dtype=np.float64)
    if weights is None:
        weights = np.ones(len(costs))
    return GroupCosts(costs, np.asarray(weights, dtype=np.float64))


def _load_map(path: str) -> StabilityMap:
    if not Path(path).is_file():
        raise ConfigurationError(f"stability map not found: {path}")
    return StabilityMap.from_json_dict(json.loads(Path(path).read_text()))


def _maps(settings: dict, model: SyntheticModel, schedule) -> tuple[StabilityMap, StabilityMap]:
    """Load both drift maps, profiling on the fly for any that were not given."""
    map_path = settings.get("map")
    velocity_path = settings.get("velocity_map")
    if map_path and velocity_path:
        return _load_map(map_path), _load_map(velocity_path)
    gmap, vmap = profile_model(model, schedule,
                               num_runs=settings["profile_runs"],
                               seed_base=settings["profile_seed_base"])
    if map_path:
        gmap = _load_map(map_path)
    if velocity_path:
        vmap = _load_map(velocity_path)
    return gmap, vmap


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _print_summary_table(smap: StabilityMap) -> None:
    print("group  mean      std       max")
    for g, s in enumerate(smap.summaries()):
        print(f"{g:<6d} {s.mean:<9.4f} {s.std:<9.4f} {s.max:<9.4f}")


PROFILE_DEFAULTS = {
    "model_config": None,
    "steps": None,
    "profile_runs": DEFAULT_PROFILE_RUNS,
    "profile_seed_base": DEFAULT_PROFILE_SEED_BASE,
    "outdir": ".",
    "out_map": None,
    "out_velocity": None,
}


def cmd_profile(args: argparse.Namespace) -> int:
    settings = _settings(args, PROFILE_DEFAULTS)
    model = _build_model(settings)
    steps = settings["steps"] or model.config.num_steps
    schedule = linear_sigma_schedule(steps)
    gmap, vmap = profile_model(model, schedule,
                               num_runs=settings["profile_runs"],
                               seed_base=settings["profile_seed_base"])
    outdir = Path(settings["outdir"])
    map_path = Path(settings["out_map"] or outdir / "stability_map.json")
    velocity_path = Path(settings["out_velocity"] or outdir / "velocity_map.json")
    fingerprint = _fingerprint(model.config.to_json_dict())
    for smap, path in ((gmap, map_path), (vmap, velocity_path)):
        payload = smap.to_json_dict()
        payload["fingerprint"] = fingerprint
        _write_json(path, payload)
    _print_summary_table(gmap)
    print(f"wrote {map_path} and {velocity_path}")
    return 0


SCHEDULE_DEFAULTS = {
    "map": None,
    "budget": 25.0,
    "gamma": DEFAULT_GAMMA,
    "mode": "layercache",
    "groups": None,
    "costs": None,
    "weights": None,
    "outdir": ".",
    "out": None,
}


def cmd_schedule(args: argparse.Namespace) -> int:
    settings = _settings(args, SCHEDULE_DEFAULTS)
    if not settings["map"]:
        raise ConfigurationError("schedule needs --map (see 'profile')")
    smap = _load_map(settings["map"])
    mode = settings["mode"]
    if mode not in PLAN_MODES:
        raise ConfigurationError(f"mode must be one of {PLAN_MODES}")
    budget = float(settings["budget"])
    gamma = float(settings["gamma"])
    if mode == "layercache":
        costs = _costs(settings, smap.num_groups)
        plan = greedy_solve(smap, budget, costs, gamma)
    else:
        num_groups = settings["groups"]
        if num_groups is None:
            raise ConfigurationError("meancache planning needs --groups to expand to")
        if smap.num_groups != 1:
            raise ConfigurationError(
                "meancache planning expects the one-group velocity map")
        plan = plan_for_mode("meancache", _placeholder_group_map(smap, num_groups),
                             smap, budget, _costs(settings, num_groups), gamma)
    out = Path(settings["out"] or Path(settings["outdir"]) / "schedule.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.save(out)
    for g in range(plan.num_groups):
        print(f"group {g}: cache rate {100.0 * plan.cache_rate(g):.1f}%")
    print(f"modeled speedup {modeled_speedup(plan):.2f}x")
    print(f"wrote {out}")
    return 0


def _placeholder_group_map(velocity_map: StabilityMap, num_groups: int) -> StabilityMap:
    """A velocity map broadcast to G groups, just to size the expanded plan."""
    S = np.repeat(velocity_map.S, num_groups, axis=0)
    return StabilityMap(S=S, epsilon=velocity_map.epsilon,
                        num_runs=velocity_map.num_runs)


RUN_DEFAULTS = {
    "model_config": None,
    "steps": None,
    "schedule": None,
    "mode": "layercache",
    "map": None,
    "velocity_map": None,
    "seeds": (0, 1, 2),
    "budget": None,
    "gamma": DEFAULT_GAMMA,
    "costs": None,
    "weights": None,
    "k_thresholds": (0.10, 0.20),
    "k_spans": (6, 3, 1),
    "profile_runs": DEFAULT_PROFILE_RUNS,
    "profile_seed_base": DEFAULT_PROFILE_SEED_BASE,
    "outdir": ".",
    "out": None,
}


def _seeds(settings: dict) -> tuple[int, ...]:
    seeds = settings["seeds"]
    if isinstance(seeds, str):
        seeds = _ints(seeds)
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigurationError("need at least one seed")
    return seeds


def _resolve_plan(settings: dict, model: SyntheticModel, schedule,
                  gmap: StabilityMap, vmap: StabilityMap) -> Schedule:
    mode = settings["mode"]
    if mode == "full":
        costs = _costs(settings, gmap.num_groups)
        d = np.ones((gmap.num_steps, gmap.num_groups), dtype=np.int64)
        return Schedule.from_decisions(d, gmap, costs, meta={"mode": "full"})
    if settings.get("schedule"):
        path = Path(settings["schedule"])
        if not path.is_file():
            raise ConfigurationError(f"schedule file not found: {path}")
        return Schedule.load(path)
    if settings.get("budget") is None:
        raise ConfigurationError("run needs --schedule or --budget")
    return plan_for_mode(mode, gmap, vmap, float(settings["budget"]),
                         _costs(settings, gmap.num_groups),
                         float(settings["gamma"]))


def cmd_run(args: argparse.Namespace) -> int:
    settings = _settings(args, RUN_DEFAULTS)
    mode = settings["mode"]
    if mode not in RUN_MODES:
        raise ConfigurationError(f"mode must be one of {RUN_MODES}")
    model = _build_model(settings)
    steps = settings["steps"] or model.config.num_steps
    schedule = linear_sigma_schedule(steps)
    gmap, vmap = _maps(settings, model, schedule)
    plan = _resolve_plan(settings, model, schedule, gmap, vmap)
    if plan.num_steps != steps or plan.num_groups != gmap.num_groups:
        raise ConfigurationError(
            f"plan is {plan.num_steps}x{plan.num_groups}, expected "
            f"{steps}x{gmap.num_groups}")
    policy = _policy(settings)
    seeds = _seeds(settings)
    eval_mode = "layercache" if mode == "full" else mode
    reports = [
        evaluate_plan(model, schedule, plan, seed, eval_mode, gmap, vmap,
                      policy=policy)
        for seed in seeds
    ]
    mean = QualityReport(
        budget=reports[0].budget,
        mode=mode,
        psnr_db=float(np.mean([r.psnr_db for r in reports])),
        ssim=float(np.mean([r.ssim for r in reports])),
        modeled_speedup=reports[0].modeled_speedup,
        attribution=[float(v) for v in
                     np.mean([r.attribution for r in reports], axis=0)],
        attribution_flagged=all(r.attribution_flagged for r in reports),
    )
    payload = mean.to_json_dict()
    payload["fingerprint"] = _fingerprint(model.config.to_json_dict())
    payload["seeds"] = list(seeds)
    payload["per_seed"] = [r.to_json_dict() for r in reports]
    out = Path(settings["out"] or Path(settings["outdir"]) / "report.json")
    _write_json(out, payload)
    csv_path = out.with_suffix(".csv")
    lines = [QualityReport.csv_header(plan.num_groups)]
    lines += [r.csv_row() for r in reports]
    csv_path.write_text("\n".join(lines) + "\n")
    print(f"mode={mode} psnr_db={mean.psnr_db:.4f} ssim={mean.ssim:.6f} "
          f"speedup={mean.modeled_speedup:.2f}x")
    print(f"wrote {out} and {csv_path}")
    return 0


SWEEP_DEFAULTS = dict(RUN_DEFAULTS)
SWEEP_DEFAULTS.pop("schedule")
SWEEP_DEFAULTS.pop("budget")
SWEEP_DEFAULTS.pop("mode")
SWEEP_DEFAULTS["budgets"] = DEFAULT_BUDGETS
SWEEP_DEFAULTS["modes"] = PLAN_MODES


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = _settings(args, SWEEP_DEFAULTS)
    budgets = settings["budgets"]
    if isinstance(budgets, str):
        budgets = _floats(budgets)
    modes = settings["modes"]
    if isinstance(modes, str):
        modes = tuple(tok for tok in modes.split(",") if tok.strip())
    for mode in modes:
        if mode not in PLAN_MODES:
            raise ConfigurationError(f"sweep mode must be one of {PLAN_MODES}")
    model = _build_model(settings)
    steps = settings["steps"] or model.config.num_steps
    schedule = linear_sigma_schedule(steps)
    gmap, vmap = _maps(settings, model, schedule)
    policy = _policy(settings)
    seeds = _seeds(settings)
    costs = _costs(settings, gmap.num_groups)
    out = Path(settings["out"] or Path(settings["outdir"]) / "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    attrs = ",".join(f"attr_g{g}" for g in range(gmap.num_groups))
    header = f"budget,mode,psnr_db,ssim,modeled_speedup,{attrs}"
    written = 0
    with out.open("w") as sink:
        sink.write(header + "\n")
        try:
            for budget in budgets:
                for mode in modes:
                    plan = plan_for_mode(mode, gmap, vmap, float(budget),
                                         costs, float(settings["gamma"]))
                    per_seed = [
                        evaluate_plan(model, schedule, plan, seed, mode,
                                      gmap, vmap, policy=policy)
                        for seed in seeds
                    ]
                    usable = [r for r in per_seed if not r.attribution_flagged]
                    attribution = (
                        np.mean([r.attribution for r in usable], axis=0)
                        if usable else np.zeros(gmap.num_groups)
                    )
                    cells = ",".join(f"{a:.6f}" for a in attribution)
                    row = (f"{float(budget):g},{mode},"
                           f"{np.mean([r.psnr_db for r in per_seed]):.4f},"
                           f"{np.mean([r.ssim for r in per_seed]):.6f},"
                           f"{per_seed[0].modeled_speedup:.4f},{cells}")
                    sink.write(row + "\n")
                    sink.flush()
                    written += 1
                    print(row)
        except LayerCacheError as exc:
            sink.write(f"# aborted after {written} rows: {exc}\n")
            raise
    print(f"wrote {out}")
    return 0


ATTRIBUTE_DEFAULTS = dict(RUN_DEFAULTS)


def cmd_attribute(args: argparse.Namespace) -> int:
    settings = _settings(args, ATTRIBUTE_DEFAULTS)
    mode = settings["mode"]
    if mode not in PLAN_MODES:
        raise ConfigurationError(f"mode must be one of {PLAN_MODES}")
    model = _build_model(settings)
    steps = settings["steps"] or model.config.num_steps
    schedule = linear_sigma_schedule(steps)
    gmap, vmap = _maps(settings, model, schedule)
    plan = _resolve_plan(settings, model, schedule, gmap, vmap)
    policy = _policy(settings)
    seeds = _seeds(settings)
    errors = []
    shares = []
    flagged = True
    for seed in seeds:
        x0 = draw_x0(model.state_dim, seed)
        result = attribute_error(model, schedule, x0, plan, policy=policy,
                                 stability=gmap)
        errors.append(result.errors)
        if not result.flagged:
            shares.append(result.shares)
            flagged = False
    mean_errors = [float(v) for v in np.mean(errors, axis=0)]
    mean_shares = ([float(v) for v in np.mean(shares, axis=0)]
                   if shares else [0.0] * plan.num_groups)
    print("group  error        share")
    for g in range(plan.num_groups):
        print(f"{g:<6d} {mean_errors[g]:<12.4e} {mean_shares[g]:.4f}")
    payload = {
        "fingerprint": _fingerprint(model.config.to_json_dict()),
        "mode": mode,
        "budget": float(plan.meta.get("budget", plan.total_cost)),
        "seeds": list(seeds),
        "errors": mean_errors,
        "shares": mean_shares,
        "flagged": flagged,
    }
    out = Path(settings["out"] or Path(settings["outdir"]) / "attribution.json")
    _write_json(out, payload)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layercache",
        description="Layer-aware caching for a synthetic flow sampler.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file of defaults for this command")
        p.add_argument("--outdir", help="directory for default output paths")

    p = sub.add_parser("profile", help="measure per-group drift over seeded runs")
    add_common(p)
    p.add_argument("--model-config", dest="model_config")
    p.add_argument("--steps", type=int)
    p.add_argument("--profile-runs", dest="profile_runs", type=int)
    p.add_argument("--profile-seed-base", dest="profile_seed_base", type=int)
    p.add_argument("--out-map", dest="out_map")
    p.add_argument("--out-velocity", dest="out_velocity")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("schedule", help="solve a budgeted plan from a drift map")
    add_common(p)
    p.add_argument("--map")
    p.add_argument("--budget", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mode", choices=PLAN_MODES)
    p.add_argument("--groups", type=int)
    p.add_argument("--costs")
    p.add_argument("--weights")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model-config", dest="model_config")
        p.add_argument("--steps", type=int)
        p.add_argument("--map")
        p.add_argument("--velocity-map", dest="velocity_map")
        p.add_argument("--seeds")
        p.add_argument("--gamma", type=float)
        p.add_argument("--costs")
        p.add_argument("--weights")
        p.add_argument("--k-thresholds", dest="k_thresholds")
        p.add_argument("--k-spans", dest="k_spans")
        p.add_argument("--profile-runs", dest="profile_runs", type=int)
        p.add_argument("--profile-seed-base", dest="profile_seed_base", type=int)
        p.add_argument("--out")

    p = sub.add_parser("run", help="replay one plan and score it")
    add_common(p)
    add_run_flags(p)
    p.add_argument("--schedule")
    p.add_argument("--budget", type=float)
    p.add_argument("--mode", choices=RUN_MODES)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="budgets x modes grid, CSV output")
    add_common(p)
    add_run_flags(p)
    p.add_argument("--budgets")
    p.add_argument("--modes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("attribute", help="per-group error shares for one plan")
    add_common(p)
    add_run_flags(p)
    p.add_argument("--schedule")
    p.add_argument("--budget", type=float)
    p.add_argument("--mode", choices=PLAN_MODES)
    p.set_defaults(func=cmd_attribute)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except LayerCacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
