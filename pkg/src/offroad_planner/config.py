"""Run configuration: one flat key=value file covering every module default.

Values are validated by constructing the per-module parameter objects, so a
bad value fails before any work starts.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional

from .cost_eval import CostWeights, DeviationParams
from .errors import ConfigError
from .map_builder import MapParams, MomentumParams, PotentialParams
from .planner import PlanConfig
from .primitive_lib import PrimitiveGenSpec
from .weight_adapt import AdaptConfig


@dataclass
class RunConfig:
    # map stack
    map_extent: float = 100.0
    resolution_low: float = 4.0
    resolution_mid: float = 1.0
    resolution_high: float = 0.25
    default_elevation: float = 0.0
    obstacle_height_threshold: float = 1.5
    attract_gain: float = 0.2
    repel_gain: float = 50.0
    attract_radius: float = 20.0
    repel_radius: float = 10.0
    momentum_gain: float = 42.0
    # deviation cost
    deviation_distance_weight: float = 0.8
    deviation_heading_weight: float = 0.2
    deviation_points: int = 20
    # horizon and clusters
    horizon_samples: int = 60
    rate: float = 10.0
    cluster_size: int = 16
    # primitive generation
    v_max: float = 10.0
    kappa_max: float = 0.2
    kappa_rate_max: float = 0.1
    accel_max: float = 1.0
    primitive_segments: int = 4
    segment_duration: float = 1.0
    # weight adaptation
    window_frames: int = 10
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    lbfgs_memory: int = 10
    baseline_w_h: float = 0.25
    baseline_w_r: float = 0.25
    baseline_w_T: float = 0.25
    baseline_w_s: float = 0.25
    # planning
    goal_radius: float = 8.0
    max_primitives: int = 3
    obstacle_margin: int = 2
    # scenario generation
    seed: int = 0
    frame_count: int = 20
    frame_step: float = 0.6
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Construct every module parameter object so all invariants run."""
        try:
            self.map_params()
            self.gen_spec()
            self.plan_config()
            self.adapt_config()
            self.dev_params()
            self.baseline_weights()
        except (ValueError, ConfigError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.rate <= 0 or self.horizon_samples < 2:
            raise ConfigError("rate must be > 0 and horizon_samples >= 2")
        if self.frame_step <= 0 or self.frame_count < 1:
            raise ConfigError("frame_step must be > 0 and frame_count >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    # ----- per-module views -------------------------------------------------

    def map_params(self) -> MapParams:
        return MapParams.square(
            extent=self.map_extent,
            resolutions=(self.resolution_low, self.resolution_mid, self.resolution_high),
            default_elevation=self.default_elevation,
            eps_threshold=self.obstacle_height_threshold,
            potential=PotentialParams(
                attract_gain=self.attract_gain,
                repel_gain=self.repel_gain,
                attract_radius=self.attract_radius,
                repel_radius=self.repel_radius,
            ),
            momentum=MomentumParams(gain=self.momentum_gain),
        )

    def gen_spec(self) -> PrimitiveGenSpec:
        return PrimitiveGenSpec(
            v_max=self.v_max,
            kappa_max=self.kappa_max,
            kappa_rate_max=self.kappa_rate_max,
            accel_max=self.accel_max,
            segments=self.primitive_segments,
            segment_duration=self.segment_duration,
            sample_dt=1.0 / self.rate,
        )

    def plan_config(self) -> PlanConfig:
        return PlanConfig(
            goal_radius=self.goal_radius,
            max_primitives=self.max_primitives,
            rate=self.rate,
            obstacle_margin=self.obstacle_margin,
            horizon=self.horizon_samples,
            cluster_size=self.cluster_size,
        )

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            memory=self.lbfgs_memory,
        )

    def dev_params(self) -> DeviationParams:
        return DeviationParams(
            distance_weight=self.deviation_distance_weight,
            heading_weight=self.deviation_heading_weight,
            num_points=self.deviation_points,
        )

    def baseline_weights(self) -> CostWeights:
        return CostWeights.normalized(
            self.baseline_w_h, self.baseline_w_r, self.baseline_w_T, self.baseline_w_s
        )

    # ----- parsing ----------------------------------------------------------

    @classmethod
    def from_mapping(cls, mapping: Dict[str, str]) -> "RunConfig":
        kwargs = {}
        types = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            default = getattr(cls, key)
            try:
                kwargs[key] = type(default)(raw) if not isinstance(raw, type(default)) else raw
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides: Optional[Dict[str, str]] = None) -> "RunConfig":
        mapping: Dict[str, str] = {}
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            mapping[key] = value
        if overrides:
            mapping.update(overrides)
        return cls.from_mapping(mapping)

    def write(self, path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")
