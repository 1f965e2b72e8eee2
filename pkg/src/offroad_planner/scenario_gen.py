"""Synthetic scenario archetypes: terrain, references, and demonstrations.

Six archetypes (straight, ramp, cross, long_curve, undulate, rough) each
define an analytic height field and a reference centerline. A hidden-weight
oracle substitutes for a learned human-trajectory predictor: it scores a
frame's candidate cluster under a preset weight vector and returns the best
member, optionally perturbed by Gaussian noise.

Everything is deterministic in (kind, seed, params).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .core import (
    FORWARD_HEADING,
    Pose2D,
    Trajectory,
    VehicleState,
    read_trajectory_csv,
    to_vehicle_frame,
    untransform_xy,
    write_trajectory_csv,
)
from .cost_eval import (
    CostWeights,
    DeviationParams,
    evaluate_candidates,
    selection_probabilities,
    total_cost,
)
from .errors import ConfigError, DataError
from .map_builder import FeatureMapStack, MapParams, PointCloud, build_stack
from .primitive_lib import PrimitiveLibrary, extract_clusters

logger = logging.getLogger(__name__)

SCENARIO_KINDS = ("straight", "ramp", "cross", "long_curve", "undulate", "rough")

# per-kind demonstration weight presets (height, roughness, deviation, smoothness)
DEMO_WEIGHT_PRESETS: Dict[str, Tuple[float, float, float, float]] = {
    "straight": (0.184, 0.377, 0.167, 0.272),
    "ramp": (0.879, 0.085, 0.007, 0.028),
    "cross": (0.241, 0.542, 0.114, 0.102),
    "long_curve": (0.010, 0.019, 0.875, 0.097),
    "undulate": (0.848, 0.072, 0.014, 0.065),
    "rough": (0.177, 0.797, 0.012, 0.013),
}

DEFAULT_PARAMS: Dict[str, Dict[str, float]] = {
    "straight": {},
    # bank + saturating dish give the slope magnitude an interior minimum a
    # few meters off-center instead of rewarding ever-larger lateral swings,
    # while the far-field lateral slope stays gentle
    "ramp": {"grade": 0.08, "ramp_start": 5.0, "bank": 0.02, "dish_amp": 0.1,
             "dish_center": 3.0, "dish_width": 5.0, "amp_max": 0.04},
    "cross": {"half_width": 6.0, "edge_slope": 0.18, "turn_radius": 12.0,
              "approach": 20.0, "turn_sign": -1.0, "amp_max": 0.12},
    "long_curve": {"radius": 40.0, "crown_height": 0.9, "crown_width": 4.0,
                   "amp_max": 0.05},
    "undulate": {"amplitude": 0.55, "wavelength": 20.0, "skew": 0.35,
                 "second_scale": 0.5, "second_skew": -0.6, "amp_max": 0.05},
    "rough": {"swale_amp": 0.25, "swale_wavelength": 28.0,
              "amp_min": 0.02, "amp_max": 0.5},
}

# every kind carries lane-banded sub-cell roughness texture on top of its base
# shape so the roughness cost varies independently of the dominant feature;
# amp_max is the defining knob for the rough archetype
COMMON_DEFAULTS = {
    "length": 260.0,  # reference length, m
    "speed": 5.0,  # nominal speed, m/s
    "points": 40000.0,  # cloud points per frame
    "max_range": 75.0,  # cloud sampling radius, m
    "noise_wavelength": 0.35,  # roughness noise lattice spacing, m
    "amp_min": 0.01,  # roughness amplitude in the smoothest lane, m
    "amp_max": 0.06,  # roughness amplitude in the roughest lane, m
    "lane_period": 7.0,  # lateral spacing of roughness lanes, m
    "lane_offset": 1.8,  # lateral shift of the smoothest lane, m
}


@dataclass
class ScenarioSpec:
    kind: str
    seed: int = 0
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(
                f"unknown scenario kind {self.kind!r}; expected one of {SCENARIO_KINDS}"
            )
        merged = dict(COMMON_DEFAULTS)
        merged.update(DEFAULT_PARAMS[self.kind])
        for key, value in self.params.items():
            if key not in merged:
                raise ConfigError(f"unknown {self.kind} parameter {key!r}")
            merged[key] = float(value)
        self.params = merged

    def demo_weights(self) -> CostWeights:
        return CostWeights.normalized(*DEMO_WEIGHT_PRESETS[self.kind])


@dataclass
class OracleSpec:
    """Hidden demonstration policy standing in for a learned predictor."""

    hidden_weights: CostWeights
    noise_sigma: float = 0.0  # m
    softmax_sample: bool = False

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


@dataclass
class FrameSample:
    """One planning frame, everything expressed in the frame's vehicle frame."""

    stack: FeatureMapStack
    state: VehicleState
    reference: Trajectory
    human_traj: Trajectory
    origin: Pose2D = Pose2D(0.0, 0.0, FORWARD_HEADING)  # world pose of the frame
    index: int = 0
    cloud: Optional[PointCloud] = None  # raw points, kept for persistence


# ----- deterministic value noise -------------------------------------------


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Lattice-point hash to [0, 1), vectorized, stable across platforms."""
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ np.uint64(seed & 0xFFFFFFFF) * np.uint64(0x165667B19E3779F9))
    h ^= h >> np.uint64(29)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(32)
    return (h & np.uint64(0xFFFFFFFF)).astype(float) / float(0x100000000)


def value_noise(x, y, wavelength: float, seed: int) -> np.ndarray:
    """Smooth pseudo-random field in [-1, 1], bilinear over a hashed lattice."""
    gx = np.asarray(x, dtype=float) / wavelength
    gy = np.asarray(y, dtype=float) / wavelength
    ix = np.floor(gx)
    iy = np.floor(gy)
    fx = gx - ix
    fy = gy - iy
    fx = fx * fx * (3.0 - 2.0 * fx)  # smoothstep
    fy = fy * fy * (3.0 - 2.0 * fy)
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    v00 = _hash01(ix, iy, seed)
    v10 = _hash01(ix + 1, iy, seed)
    v01 = _hash01(ix, iy + 1, seed)
    v11 = _hash01(ix + 1, iy + 1, seed)
    top = v00 * (1 - fx) + v10 * fx
    bot = v01 * (1 - fx) + v11 * fx
    return 2.0 * (top * (1 - fy) + bot * fy) - 1.0


# ----- per-kind analytic height fields --------------------------------------


def base_height_function(spec: ScenarioSpec) -> Callable:
    """Smooth base shape z(x, y) of the scenario, without roughness texture."""
    p = spec.params
    kind = spec.kind

    if kind == "straight":
        return lambda x, y: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    if kind == "ramp":
        def fn(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            lateral = (p["bank"] * x + p["dish_amp"] * p["dish_width"]
                       * np.log(np.cosh((x - p["dish_center"]) / p["dish_width"])))
            return p["grade"] * np.maximum(y - p["ramp_start"], 0.0) + lateral
        return fn

    if kind == "cross":
        def fn(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            out_x = np.maximum(np.abs(x) - p["half_width"], 0.0)
            out_y = np.maximum(
                np.abs(y - p["approach"] - p["turn_radius"]) - p["half_width"], 0.0
            )
            return p["edge_slope"] * np.minimum(out_x, out_y)
        return fn

    if kind == "long_curve":
        def fn(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            d = np.abs(np.hypot(x + p["radius"], y) - p["radius"])
            return p["crown_height"] / (1.0 + (d / p["crown_width"]) ** 2)
        return fn

    if kind == "undulate":
        # two skewed wave trains; the surface never flattens globally and has
        # no lateral mirror symmetry, so one lane is always distinctly best
        def fn(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            wl = p["wavelength"]
            z1 = np.sin(2.0 * np.pi * (y + p["skew"] * x) / wl)
            z2 = np.sin(2.0 * np.pi * (y + p["second_skew"] * x) / (1.7 * wl) + 1.1)
            return p["amplitude"] * (z1 + p["second_scale"] * z2)
        return fn

    # rough: gentle diagonal swale; the lane texture is the defining feature
    def fn(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return p["swale_amp"] * np.sin(2.0 * np.pi * (x + y) / p["swale_wavelength"])
    return fn


def _lane_coordinate(spec: ScenarioSpec) -> Callable:
    """Lateral coordinate used for the roughness lanes, roughly across-track."""
    p = spec.params
    if spec.kind == "long_curve":
        return lambda x, y: np.hypot(np.asarray(x, dtype=float) + p["radius"],
                                     np.asarray(y, dtype=float)) - p["radius"]
    if spec.kind == "cross":
        return lambda x, y: (np.asarray(x, dtype=float)
                             + np.asarray(y, dtype=float)) / math.sqrt(2.0)
    return lambda x, y: np.asarray(x, dtype=float)


def height_function(spec: ScenarioSpec) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Analytic z(x, y) for the scenario in the world frame.

    Base shape plus lane-banded sub-cell roughness texture; setting
    amp_min = amp_max = 0 yields the pure base shape.
    """
    p = spec.params
    base = base_height_function(spec)
    lane_u = _lane_coordinate(spec)
    amp_span = p["amp_max"] - p["amp_min"]
    if p["amp_min"] == 0.0 and amp_span == 0.0:
        return base

    def fn(x, y):
        z = base(x, y)
        u = lane_u(x, y)
        lane = 0.5 * (1.0 - np.cos(2.0 * np.pi * (u - p["lane_offset"]) / p["lane_period"]))
        amp = p["amp_min"] + amp_span * lane
        return z + amp * value_noise(x, y, p["noise_wavelength"], spec.seed)
    return fn


def sample_cloud(height_fn, pose: Pose2D, rng: np.random.Generator,
                 n_points: int, max_range: float) -> PointCloud:
    """Range-decaying radial point samples around a pose, in its vehicle frame.

    z is measured relative to the terrain height under the vehicle.
    """
    u = rng.random(n_points)
    r = max_range * u ** 1.5
    ang = rng.uniform(0.0, 2.0 * np.pi, n_points)
    xv = r * np.cos(ang)
    yv = r * np.sin(ang)
    xw, yw = untransform_xy(xv, yv, pose)
    z0 = float(np.asarray(height_fn(np.array([pose.x]), np.array([pose.y])))[0])
    z = np.asarray(height_fn(xw, yw)) - z0
    return PointCloud(np.column_stack([xv, yv, z]))


def gen_terrain(spec: ScenarioSpec) -> Tuple[Callable, PointCloud]:
    """Analytic height field plus a seeded cloud sampled around the start pose."""
    fn = height_function(spec)
    rng = np.random.default_rng([spec.seed, 0])
    cloud = sample_cloud(fn, Pose2D(0.0, 0.0, FORWARD_HEADING), rng,
                         int(spec.params["points"]), spec.params["max_range"])
    return fn, cloud


def gen_reference(spec: ScenarioSpec) -> Trajectory:
    """World-frame centerline of the scenario corridor at constant speed."""
    p = spec.params
    speed = p["speed"]
    length = p["length"]
    ds = 1.0

    if spec.kind == "cross":
        # straight approach, quarter turn of radius r, then along the x corridor
        r = p["turn_radius"]
        sign = 1.0 if p["turn_sign"] >= 0 else -1.0
        approach = p["approach"]
        arc_len = r * math.pi / 2.0
        xs, ys, hs, ks = [], [], [], []
        n = int(length / ds) + 1
        for idx in range(n):
            s = idx * ds
            if s <= approach:
                xs.append(0.0)
                ys.append(s)
                hs.append(FORWARD_HEADING)
                ks.append(0.0)
            elif s <= approach + arc_len:
                phi = (s - approach) / r  # turned angle so far
                xs.append(sign * r * (math.cos(phi) - 1.0))
                ys.append(approach + r * math.sin(phi))
                hs.append(FORWARD_HEADING + sign * phi)
                ks.append(sign / r)
            else:
                tail = s - approach - arc_len
                xs.append(-sign * r - sign * tail)
                ys.append(approach + r)
                hs.append(FORWARD_HEADING + sign * math.pi / 2.0)
                ks.append(0.0)
        t = np.arange(n) * ds / speed
        return Trajectory.from_arrays(t, xs, ys, hs, np.full(n, speed), ks,
                                      frame_id="world")

    if spec.kind == "long_curve":
        r = p["radius"]
        n = int(length / ds) + 1
        phi = np.arange(n) * ds / r
        x = -r + r * np.cos(phi)
        y = r * np.sin(phi)
        heading = FORWARD_HEADING + phi
        t = np.arange(n) * ds / speed
        return Trajectory.from_arrays(t, x, y, heading, np.full(n, speed),
                                      np.full(n, 1.0 / r), frame_id="world")

    # straight corridor kinds
    n = int(length / ds) + 1
    y = np.arange(n) * ds
    t = y / speed
    return Trajectory.from_arrays(t, np.zeros(n), y, np.full(n, FORWARD_HEADING),
                                  np.full(n, speed), np.zeros(n), frame_id="world")


def oracle_demonstration(context, library: PrimitiveLibrary, oracle: OracleSpec,
                         seed: int = 0, horizon: int = 60, m: int = 16,
                         dev_params: Optional[DeviationParams] = None,
                         normalize: bool = True) -> Trajectory:
    """Pick the best cluster member under the oracle's hidden weights.

    context is (stack, state, reference) in one vehicle frame. With
    noise_sigma = 0 the result is exactly a cluster member; otherwise the
    positions carry seeded Gaussian noise. softmax_sample draws the member
    from the selection probabilities instead of taking the argmin. Costs are
    cluster-mean normalized (the pipeline convention) unless normalize=False.
    """
    stack, state, reference = context
    cluster = extract_clusters(library, state, horizon=horizon, m=m)
    if len(cluster) == 0:
        raise DataError("empty candidate cluster")
    breakdowns = evaluate_candidates(cluster.members, stack, reference, dev_params,
                                     normalize=normalize)
    totals = [total_cost(b, oracle.hidden_weights) for b in breakdowns]
    rng = np.random.default_rng([seed, 0x0DAC])
    if oracle.softmax_sample:
        probs = selection_probabilities(totals)
        best = int(rng.choice(len(totals), p=probs))
    else:
        best = int(np.argmin(totals))
    member = cluster.members[best]
    if oracle.noise_sigma <= 0:
        return member
    noise = rng.normal(0.0, oracle.noise_sigma, (len(member), 2))
    return Trajectory.from_arrays(
        member.t, member.x + noise[:, 0], member.y + noise[:, 1],
        member.heading, member.speed, member.curvature, member.frame_id,
    )


def _pose_at_arc(reference: Trajectory, s: float) -> Tuple[Pose2D, float]:
    """Pose and curvature at arc position s along the reference."""
    arc = reference.arc_lengths()
    s = float(np.clip(s, 0.0, arc[-1]))
    x = float(np.interp(s, arc, reference.x))
    y = float(np.interp(s, arc, reference.y))
    h = float(np.interp(s, arc, np.unwrap(reference.heading)))
    k = float(np.interp(s, arc, reference.curvature))
    return Pose2D(x, y, h), k


def gen_frames(spec: ScenarioSpec, count: int, oracle: OracleSpec,
               library: PrimitiveLibrary, map_params: Optional[MapParams] = None,
               frame_step: float = 0.6, horizon: int = 60, m: int = 16,
               dev_params: Optional[DeviationParams] = None,
               local_ref_length: float = 130.0) -> List[FrameSample]:
    """Generate frames advancing along the reference, each with a demonstration.

    The vehicle is moved frame_step seconds along the reference between
    frames; each frame gets a fresh cloud around the new pose, a rebuilt map
    stack, the local reference, and the oracle's demonstration, all in that
    frame's vehicle frame.
    """
    if count < 1:
        raise ConfigError("frame count must be >= 1")
    map_params = map_params or MapParams.square()
    fn = height_function(spec)
    reference = gen_reference(spec)
    arc = reference.arc_lengths()
    speed = spec.params["speed"]
    n_points = int(spec.params["points"])
    max_range = spec.params["max_range"]
    frames: List[FrameSample] = []
    for i in range(count):
        s = speed * frame_step * i
        if s > arc[-1] - 1.0:
            raise ConfigError(
                f"frame {i} runs past the reference (need length > {s + 1:.0f} m)"
            )
        pose, kappa = _pose_at_arc(reference, s)
        rng = np.random.default_rng([spec.seed, 1, i])
        cloud = sample_cloud(fn, pose, rng, n_points, max_range)
        state = VehicleState(Pose2D(0.0, 0.0, FORWARD_HEADING), (0.0, speed), kappa)
        # local slice of the reference, expressed in this vehicle frame
        j0 = int(np.searchsorted(arc, max(s - 5.0, 0.0)))
        j1 = int(np.searchsorted(arc, min(s + local_ref_length, arc[-1])))
        j1 = max(j1, j0 + 2)
        local_ref = to_vehicle_frame(
            Trajectory.from_arrays(
                reference.t[j0:j1], reference.x[j0:j1], reference.y[j0:j1],
                reference.heading[j0:j1], reference.speed[j0:j1],
                reference.curvature[j0:j1], "world",
            ),
            pose,
        )
        stack = build_stack(cloud, state, local_ref, map_params)
        human = oracle_demonstration(
            (stack, state, local_ref), library, oracle,
            seed=spec.seed * 100003 + i, horizon=horizon, m=m, dev_params=dev_params,
        )
        frames.append(FrameSample(stack, state, local_ref, human, pose, i, cloud))
    return frames


# ----- bundle persistence ----------------------------------------------------

STATE_HEADER = "x,y,heading,v_x,v_y,curvature"


def _write_state_csv(path, state: VehicleState, origin: Pose2D) -> None:
    lines = [STATE_HEADER + ",origin_x,origin_y,origin_heading"]
    vals = (state.pose.x, state.pose.y, state.pose.heading,
            state.velocity[0], state.velocity[1], state.curvature,
            origin.x, origin.y, origin.heading)
    lines.append(",".join(format(v, ".17g") for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_state_csv(path) -> Tuple[VehicleState, Pose2D]:
    lines = Path(path).read_text().strip().splitlines()
    if len(lines) < 2:
        raise DataError(f"{path}: missing state row")
    vals = [float(v) for v in lines[1].split(",")]
    if len(vals) < 6:
        raise DataError(f"{path}: expected at least 6 state fields")
    state = VehicleState(Pose2D(vals[0], vals[1], vals[2]), (vals[3], vals[4]), vals[5])
    origin = Pose2D(*vals[6:9]) if len(vals) >= 9 else Pose2D(0.0, 0.0, FORWARD_HEADING)
    return state, origin


def save_bundle(directory, frames: List[FrameSample], spec: ScenarioSpec,
                oracle: OracleSpec) -> None:
    """Persist frames as one directory per frame plus scenario.json metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "kind": spec.kind,
        "seed": spec.seed,
        "params": spec.params,
        "count": len(frames),
        "oracle": {
            "hidden_weights": list(oracle.hidden_weights.as_array()),
            "noise_sigma": oracle.noise_sigma,
            "softmax_sample": oracle.softmax_sample,
        },
    }
    (directory / "scenario.json").write_text(json.dumps(meta, indent=1) + "\n")
    for frame in frames:
        if frame.cloud is None:
            raise DataError(f"frame {frame.index} has no point cloud to persist")
        fdir = directory / f"frame_{frame.index:04d}"
        fdir.mkdir(exist_ok=True)
        frame.cloud.write_xyz(fdir / "cloud.xyz")
        write_trajectory_csv(fdir / "reference.csv", frame.reference)
        write_trajectory_csv(fdir / "human.csv", frame.human_traj)
        _write_state_csv(fdir / "state.csv", frame.state, frame.origin)


def load_bundle(directory, map_params: Optional[MapParams] = None
                ) -> Tuple[List[FrameSample], dict]:
    """Load a frame bundle, rebuilding each frame's map stack from its cloud."""
    directory = Path(directory)
    meta_path = directory / "scenario.json"
    if not meta_path.exists():
        raise DataError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text())
    map_params = map_params or MapParams.square()
    frames = []
    for fdir in sorted(directory.glob("frame_*")):
        idx = int(fdir.name.split("_")[1])
        cloud = PointCloud.read_xyz(fdir / "cloud.xyz")
        reference = read_trajectory_csv(fdir / "reference.csv")
        human = read_trajectory_csv(fdir / "human.csv")
        state, origin = _read_state_csv(fdir / "state.csv")
        stack = build_stack(cloud, state, reference, map_params)
        frames.append(FrameSample(stack, state, reference, human, origin, idx, cloud))
    if not frames:
        raise DataError(f"{directory}: no frame_* directories")
    return frames, meta
