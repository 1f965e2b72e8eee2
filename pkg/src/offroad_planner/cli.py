"""Command-line driver: gen, maps, primitives, adapt, plan, run, eval.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 infeasible/blocked.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import report
from .config import RunConfig
from .core import FORWARD_HEADING, Pose2D, Trajectory, VehicleState, write_trajectory_csv
from .cost_eval import CostWeights, write_cost_report_csv
from .errors import ConfigError, DataError, InfeasibleError, PlannerError
from .map_builder import (
    PointCloud,
    build_stack,
    write_layer_csv,
    write_layer_pgm,
)
from .planner import plan as plan_trajectory
from .planner import replan_session, score_candidates
from .primitive_lib import PrimitiveLibrary, generate_primitives
from .scenario_gen import (
    DEMO_WEIGHT_PRESETS,
    FrameSample,
    OracleSpec,
    ScenarioSpec,
    gen_frames,
    load_bundle,
    save_bundle,
)
from .weight_adapt import (
    AdaptConfig,
    WeightAdapter,
    prepare_frame,
    read_weights_json,
    write_weights_json,
)

logger = logging.getLogger(__name__)


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig.from_mapping(overrides)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _library(args, config: RunConfig) -> PrimitiveLibrary:
    if getattr(args, "library", None):
        return PrimitiveLibrary.load(args.library)
    logger.info("no --library given; generating primitives from config")
    return generate_primitives(config.gen_spec())


def _oracle_for(spec: ScenarioSpec, config: RunConfig) -> OracleSpec:
    return OracleSpec(hidden_weights=spec.demo_weights(), noise_sigma=config.noise_sigma)


def _parse_scenario_params(items) -> dict:
    params = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        params[key.strip()] = float(value)
    return params


def cmd_gen(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    spec = ScenarioSpec(args.kind, seed=config.seed,
                        params=_parse_scenario_params(args.param))
    oracle = _oracle_for(spec, config)
    library = _library(args, config)
    frames = gen_frames(
        spec, args.count or config.frame_count, oracle, library,
        map_params=config.map_params(), frame_step=config.frame_step,
        horizon=config.horizon_samples, m=config.cluster_size,
        dev_params=config.dev_params(),
    )
    save_bundle(out, frames, spec, oracle)
    report.save_stack_figure(frames[0].stack, out / "preview.png")
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def cmd_maps(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    cloud = PointCloud.read_xyz(args.cloud)
    if args.reference:
        from .core import read_trajectory_csv

        reference = read_trajectory_csv(args.reference)
    else:
        n = int(config.map_extent) + 10
        reference = Trajectory.from_arrays(
            np.arange(n) / config.rate, np.zeros(n), np.arange(n, dtype=float),
            np.full(n, FORWARD_HEADING), np.full(n, args.speed), np.zeros(n),
        )
    state = VehicleState(Pose2D(0.0, 0.0, FORWARD_HEADING), (0.0, args.speed))
    stack = build_stack(cloud, state, reference, config.map_params())
    for name, layer in stack.layers().items():
        write_layer_csv(out / f"{name}.csv", layer)
        write_layer_pgm(out / f"{name}.pgm", layer)
    report.save_stack_figure(stack, out / "stack.png")
    print(f"wrote 5 layers (CSV + PGM + scale sidecars) to {out}")
    return 0


def cmd_primitives(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    library = generate_primitives(config.gen_spec())
    library.save(out)
    print(f"wrote {library.size} primitives "
          f"({len(library.entries)} entry bins) to {out}")
    return 0


def cmd_adapt(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    library = _library(args, config)
    frames, _meta = load_bundle(args.bundle, config.map_params())
    adapter = WeightAdapter(config.adapt_config(), window=config.window_frames)
    result = None
    for sample in frames:
        adapt_frame, _cluster = prepare_frame(
            sample, library, horizon=config.horizon_samples,
            m=config.cluster_size, dev_params=config.dev_params(),
        )
        adapter.push(adapt_frame)
        result = adapter.solve()
    write_weights_json(out / "weights.json", result, frames=len(frames))
    w = result.weights
    print(f"weights: w_h={w.height:.4f} w_r={w.roughness:.4f} "
          f"w_T={w.deviation:.4f} w_s={w.smoothness:.4f} "
          f"(objective {result.objective:.4f}, "
          f"{'converged' if result.converged else 'iteration cap'})")
    return 0


def cmd_plan(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    library = _library(args, config)
    frames, _meta = load_bundle(args.bundle, config.map_params())
    if not 0 <= args.frame < len(frames):
        raise DataError(f"frame {args.frame} out of range (bundle has {len(frames)})")
    sample = frames[args.frame]
    weights = read_weights_json(args.weights) if args.weights else CostWeights.uniform()
    planned = plan_trajectory(
        sample.stack, sample.state, sample.reference, weights, library,
        config.plan_config(), config.dev_params(),
    )
    write_trajectory_csv(out / "plan.csv", planned.states)
    payload = {
        "success": planned.success,
        "diagnostic": planned.diagnostic,
        "weights": dict(zip(("w_h", "w_r", "w_T", "w_s"),
                            planned.weights_used.as_array().tolist())),
        "segments": [
            {
                "source": seg.source,
                "J_h": seg.breakdown.height,
                "J_r": seg.breakdown.roughness,
                "J_T": seg.breakdown.deviation,
                "J_s": seg.breakdown.smoothness,
                "total": seg.total,
            }
            for seg in planned.segments
        ],
    }
    (out / "plan_costs.json").write_text(json.dumps(payload, indent=1) + "\n")
    report.save_plan_figure(sample.stack, planned, sample.reference, out / "plan.png")
    if not planned.success and not planned.segments:
        print(f"plan blocked: {planned.diagnostic}")
        return 4
    print(f"plan with {len(planned.segments)} segments "
          f"({len(planned.states)} states) -> {out}")
    return 0


def _session_outputs(out: Path, name: str, session, config: RunConfig) -> None:
    report.write_metrics_csv(out / f"{name}_metrics.csv", session.metrics)
    report.save_session_figure(session.metrics, out / f"{name}_session.png", name)


def cmd_run(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    library = _library(args, config)
    frames, meta = load_bundle(args.bundle, config.map_params())
    session = replan_session(
        frames, library, config.plan_config(),
        baseline_weights=config.baseline_weights(),
        adapt_config=config.adapt_config(), window=config.window_frames,
        adaptive=not args.no_adapt, deterministic=not args.free_running,
        dev_params=config.dev_params(),
    )
    name = meta.get("kind", "session")
    _session_outputs(out, name, session, config)
    final_weights = session.metrics[-1].weights if session.metrics else CostWeights.uniform()
    from .weight_adapt import AdaptResult

    write_weights_json(out / "weights.json",
                       AdaptResult(final_weights, 0.0, 0, True), frames=len(frames))
    opt, joint, non = session.selection_counts()
    print(f"{name}: optimal {opt}, joint-optimal {joint}, non-optimal {non} "
          f"of {len(session.metrics)} frames -> {out}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    library = _library(args, config)
    rows = []
    weight_table = {}
    for bundle_dir in args.bundles:
        frames, meta = load_bundle(bundle_dir, config.map_params())
        name = meta.get("kind", Path(bundle_dir).name)
        session = replan_session(
            frames, library, config.plan_config(),
            baseline_weights=config.baseline_weights(),
            adapt_config=config.adapt_config(), window=config.window_frames,
            adaptive=True, deterministic=True, dev_params=config.dev_params(),
        )
        opt, joint, non = session.selection_counts()
        rows.append({
            "scenario": name,
            "optimal": opt,
            "joint_optimal": joint,
            "non_optimal": non,
        })
        weight_table[name] = session.metrics[-1].weights
        _session_outputs(out, name, session, config)
    report.write_eval_report_csv(out / "eval_report.csv", rows)
    report.write_weight_table_csv(out / "weights_by_scenario.csv", weight_table)
    report.save_weight_table_figure(weight_table, out / "weights_by_scenario.png")
    for r in rows:
        total = r["optimal"] + r["joint_optimal"] + r["non_optimal"]
        pct = 100.0 * (r["optimal"] + r["joint_optimal"]) / total if total else 0.0
        print(f"{r['scenario']}: {pct:.1f}% optimal "
              f"({r['optimal']}+{r['joint_optimal']} of {total})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offroad-planner",
        description="Terrain-aware off-road planning with demonstration-adapted weights",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: cwd)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config value (repeatable)")

    p = sub.add_parser("gen", help="generate a synthetic scenario frame bundle")
    common(p)
    p.add_argument("--kind", required=True, choices=sorted(DEMO_WEIGHT_PRESETS),
                   help="scenario archetype")
    p.add_argument("--count", type=int, help="number of frames")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="scenario shape parameter (repeatable)")
    p.add_argument("--library", help="prebuilt primitive library directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("maps", help="build and export feature map layers from a cloud")
    common(p)
    p.add_argument("--cloud", required=True, help="ASCII x y z point file")
    p.add_argument("--reference", help="reference trajectory CSV (default: straight +y)")
    p.add_argument("--speed", type=float, default=5.0, help="vehicle speed for momentum")
    p.set_defaults(func=cmd_maps)

    p = sub.add_parser("primitives", help="build and persist the primitive library")
    common(p)
    p.set_defaults(func=cmd_primitives)

    p = sub.add_parser("adapt", help="learn cost weights from a frame bundle")
    common(p)
    p.add_argument("--bundle", required=True, help="frame bundle directory")
    p.add_argument("--library", help="prebuilt primitive library directory")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("plan", help="plan a single frame from a bundle")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--weights", help="weights JSON (default: uniform)")
    p.add_argument("--library", help="prebuilt primitive library directory")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="replanning session over a bundle")
    common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--library", help="prebuilt primitive library directory")
    p.add_argument("--no-adapt", action="store_true",
                   help="disable the weight worker (fixed baseline weights)")
    p.add_argument("--free-running", action="store_true",
                   help="run the weight worker on its own thread with real timings")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="selection statistics across scenario bundles")
    common(p)
    p.add_argument("--bundles", nargs="+", required=True)
    p.add_argument("--library", help="prebuilt primitive library directory")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 4
    except PlannerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
