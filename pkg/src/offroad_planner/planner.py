"""Primitive selection and receding-horizon planning under learned weights.

Obstacle handling is a hard feasibility gate: candidates touching inflated
obstacle cells (or leaving the map) are excluded before cost scoring, since
the traversal cost itself carries no obstacle term.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Pose2D, Trajectory, VehicleState
from .cost_eval import (
    CostBreakdown,
    CostWeights,
    DeviationParams,
    evaluate_candidates,
    selection_probabilities,
    total_cost,
)
from .errors import ConfigError, InfeasibleError
from .map_builder import FeatureMapStack
from .primitive_lib import PrimitiveLibrary, TrajectoryCluster, extract_clusters
from .scenario_gen import FrameSample
from .weight_adapt import (
    AdaptConfig,
    WeightAdapter,
    WeightWorker,
    prepare_frame,
)

logger = logging.getLogger(__name__)


@dataclass
class PlanConfig:
    goal_radius: float = 8.0  # m
    max_primitives: int = 3
    rate: float = 10.0  # Hz
    obstacle_margin: int = 2  # cells
    horizon: int = 60  # samples per segment
    cluster_size: int = 16
    normalize_costs: bool = True  # cluster-mean normalization (pipeline convention)

    def __post_init__(self):
        if (self.goal_radius <= 0 or self.max_primitives < 1 or self.rate <= 0
                or self.obstacle_margin < 0 or self.horizon < 2 or self.cluster_size < 1):
            raise ConfigError("invalid plan configuration")


@dataclass
class PlanSegment:
    source: str
    breakdown: CostBreakdown
    total: float


@dataclass
class PlannedTrajectory:
    states: Trajectory
    segments: List[PlanSegment]
    weights_used: CostWeights
    success: bool
    diagnostic: str = ""

    @property
    def primitive_ids(self) -> List[str]:
        return [s.source for s in self.segments]


def inflate_obstacles(obstacle: np.ndarray, margin: int) -> np.ndarray:
    """Dilate the binary obstacle layer by margin cells (square neighborhood)."""
    base = obstacle.astype(bool)
    if margin <= 0:
        return base
    h, w = base.shape
    out = np.zeros_like(base)
    for dr in range(-margin, margin + 1):
        for dc in range(-margin, margin + 1):
            r0, r1 = max(0, dr), min(h, h + dr)
            c0, c1 = max(0, dc), min(w, w + dc)
            out[r0:r1, c0:c1] |= base[r0 - dr:r1 - dr, c0 - dc:c1 - dc]
    return out


def feasible_mask(candidates: Sequence[Trajectory], stack: FeatureMapStack,
                  margin: int) -> np.ndarray:
    """True for candidates fully on-map and clear of inflated obstacle cells."""
    inflated = inflate_obstacles(stack.obstacle, margin)
    spec = stack.spec
    mask = np.zeros(len(candidates), dtype=bool)
    for i, cand in enumerate(candidates):
        inb = spec.contains(cand.x, cand.y)
        if not np.all(inb):
            continue
        row, col = spec.cell_of(cand.x, cand.y)
        mask[i] = not np.any(inflated[row, col])
    return mask


@dataclass
class SelectionDetail:
    index: int  # into the original candidate list
    feasible: np.ndarray
    breakdowns: List[Optional[CostBreakdown]]  # None for infeasible candidates
    totals: np.ndarray  # +inf for infeasible candidates


def score_candidates(candidates: Sequence[Trajectory], stack: FeatureMapStack,
                     reference: Trajectory, weights: CostWeights,
                     margin: int = 0,
                     dev_params: Optional[DeviationParams] = None,
                     normalize: bool = False) -> SelectionDetail:
    """Feasibility-filter then cost-score a candidate set; argmin by total."""
    if len(candidates) == 0:
        raise InfeasibleError("no candidates to select from")
    feas = feasible_mask(candidates, stack, margin)
    if not np.any(feas):
        raise InfeasibleError("all candidates infeasible (obstacles or map edge)")
    idxs = np.nonzero(feas)[0]
    scored = evaluate_candidates([candidates[i] for i in idxs], stack, reference,
                                 dev_params, normalize=normalize)
    breakdowns: List[Optional[CostBreakdown]] = [None] * len(candidates)
    totals = np.full(len(candidates), np.inf)
    for i, b in zip(idxs, scored):
        breakdowns[i] = b
        totals[i] = total_cost(b, weights)
    best = int(np.argmin(totals))
    return SelectionDetail(best, feas, breakdowns, totals)


def select_best(candidates, stack: FeatureMapStack, reference: Trajectory,
                weights: CostWeights, margin: int = 0,
                dev_params: Optional[DeviationParams] = None,
                normalize: bool = False) -> int:
    """Index of the lowest-total-cost feasible candidate (ties: lowest index).

    candidates may be a TrajectoryCluster or a sequence of trajectories.
    """
    members = candidates.members if isinstance(candidates, TrajectoryCluster) else candidates
    return score_candidates(members, stack, reference, weights, margin, dev_params,
                            normalize=normalize).index


def _advance_state(member: Trajectory) -> VehicleState:
    h = float(member.heading[-1])
    v = float(member.speed[-1])
    return VehicleState(
        Pose2D(float(member.x[-1]), float(member.y[-1]), h),
        (v * np.cos(h), v * np.sin(h)),
        float(member.curvature[-1]),
    )


def plan(stack: FeatureMapStack, state: VehicleState, reference: Trajectory,
         weights: CostWeights, library: PrimitiveLibrary,
         config: Optional[PlanConfig] = None,
         dev_params: Optional[DeviationParams] = None) -> PlannedTrajectory:
    """Greedy primitive expansion from the vehicle toward the guide point.

    Each step extracts the candidate cluster for the current state, picks the
    feasible candidate with the lowest weighted cost, appends it, and advances
    to its exit state. Stops within goal_radius of the guide point, at the
    primitive cap, or when no feasible candidate remains (partial plan with a
    blocked diagnostic).
    """
    config = config or PlanConfig()
    goal = stack.guide_point
    current = state
    segments: List[PlanSegment] = []
    t_parts: List[np.ndarray] = []
    cols: List[np.ndarray] = [[] for _ in range(5)]
    t_offset = 0.0
    success = True
    diagnostic = ""

    for step in range(config.max_primitives):
        dist_to_goal = float(np.hypot(current.pose.x - goal.x, current.pose.y - goal.y))
        if dist_to_goal <= config.goal_radius:
            diagnostic = f"goal reached within {config.goal_radius} m"
            break
        cluster = extract_clusters(library, current, horizon=config.horizon,
                                   m=config.cluster_size)
        try:
            detail = score_candidates(cluster.members, stack, reference, weights,
                                      config.obstacle_margin, dev_params,
                                      normalize=config.normalize_costs)
        except InfeasibleError as exc:
            success = len(segments) > 0
            diagnostic = f"blocked at step {step}: {exc}"
            if not segments:
                logger.warning("plan blocked with no progress: %s", exc)
            break
        member = cluster.members[detail.index]
        segments.append(PlanSegment(
            source=cluster.sources[detail.index],
            breakdown=detail.breakdowns[detail.index],
            total=float(detail.totals[detail.index]),
        ))
        skip = 1 if t_parts else 0
        t_parts.append(member.t[skip:] + t_offset)
        for ci, arr in enumerate((member.x, member.y, member.heading,
                                  member.speed, member.curvature)):
            cols[ci].append(arr[skip:])
        t_offset += float(member.t[-1])
        current = _advance_state(member)

    if t_parts:
        states = Trajectory.from_arrays(
            np.concatenate(t_parts),
            np.concatenate(cols[0]), np.concatenate(cols[1]),
            np.concatenate(cols[2]), np.concatenate(cols[3]),
            np.concatenate(cols[4]),
        )
    else:
        states = Trajectory([])
    return PlannedTrajectory(states, segments, weights, success, diagnostic)


# ----- replanning session ------------------------------------------------------


@dataclass
class FrameMetrics:
    frame: int
    wall_ms: float
    breakdown: CostBreakdown  # of the selected first-segment candidate
    total: float
    selected: int
    baseline_selected: int
    oracle_optimal: int
    agree: bool
    baseline_agree: bool
    plan_height: float  # mean |elevation derivative| of the adaptive plan
    plan_roughness: float
    baseline_plan_height: float
    baseline_plan_roughness: float
    weights: CostWeights


@dataclass
class SessionResult:
    plans: List[PlannedTrajectory]
    baseline_plans: List[PlannedTrajectory]
    metrics: List[FrameMetrics]

    def selection_counts(self) -> Tuple[int, int, int]:
        """(optimal, joint_optimal, non_optimal) selection counts."""
        opt = sum(1 for m in self.metrics if m.agree and not m.baseline_agree)
        joint = sum(1 for m in self.metrics if m.agree and m.baseline_agree)
        non = sum(1 for m in self.metrics if not m.agree)
        return opt, joint, non


def _plan_quality(planned: PlannedTrajectory, stack: FeatureMapStack):
    from .cost_eval import height_cost, roughness_cost

    if len(planned.states) < 2:
        return float("nan"), float("nan")
    return (height_cost(planned.states, stack), roughness_cost(planned.states, stack))


def replan_session(frames: Sequence[FrameSample], library: PrimitiveLibrary,
                   config: Optional[PlanConfig] = None,
                   baseline_weights: Optional[CostWeights] = None,
                   adapt_config: Optional[AdaptConfig] = None,
                   window: int = 10,
                   adaptive: bool = True,
                   deterministic: bool = True,
                   dev_params: Optional[DeviationParams] = None) -> SessionResult:
    """Replan over a frame sequence with a weight worker running alongside.

    Per frame: the frame's candidate scores go to the weight worker, the
    latest published weights drive the adaptive plan, and a fixed-weight
    baseline planner runs on the identical frame for comparison. The
    per-frame oracle-optimal candidate is the cluster member closest to the
    demonstration. With deterministic=True the worker solves at frame
    boundaries (reproducible sessions) and wall times are reported as 0.
    """
    config = config or PlanConfig()
    baseline_weights = baseline_weights or CostWeights.uniform()
    worker = None
    if adaptive:
        adapter = WeightAdapter(adapt_config or AdaptConfig(), window=window)
        worker = WeightWorker(adapter, deterministic=deterministic)

    plans: List[PlannedTrajectory] = []
    baseline_plans: List[PlannedTrajectory] = []
    metrics: List[FrameMetrics] = []
    try:
        for i, frame in enumerate(frames):
            t0 = time.perf_counter()
            adapt_frame, cluster = prepare_frame(
                frame, library, horizon=config.horizon, m=config.cluster_size,
                dev_params=dev_params, normalize=config.normalize_costs,
            )
            if worker is not None:
                worker.submit(adapt_frame)
                worker.step()
                published = worker.latest()
                weights = published.weights if published else baseline_weights
            else:
                weights = baseline_weights

            detail = score_candidates(cluster.members, frame.stack, frame.reference,
                                      weights, config.obstacle_margin, dev_params,
                                      normalize=config.normalize_costs)
            base_detail = score_candidates(cluster.members, frame.stack,
                                           frame.reference, baseline_weights,
                                           config.obstacle_margin, dev_params,
                                           normalize=config.normalize_costs)
            oracle_idx = int(np.argmin(adapt_frame.distances))

            planned = plan(frame.stack, frame.state, frame.reference, weights,
                           library, config, dev_params)
            base_planned = plan(frame.stack, frame.state, frame.reference,
                                baseline_weights, library, config, dev_params)
            wall_ms = 0.0 if deterministic else (time.perf_counter() - t0) * 1e3

            ph, pr = _plan_quality(planned, frame.stack)
            bph, bpr = _plan_quality(base_planned, frame.stack)
            plans.append(planned)
            baseline_plans.append(base_planned)
            metrics.append(FrameMetrics(
                frame=i,
                wall_ms=wall_ms,
                breakdown=detail.breakdowns[detail.index],
                total=float(detail.totals[detail.index]),
                selected=detail.index,
                baseline_selected=base_detail.index,
                oracle_optimal=oracle_idx,
                agree=detail.index == oracle_idx,
                baseline_agree=base_detail.index == oracle_idx,
                plan_height=ph,
                plan_roughness=pr,
                baseline_plan_height=bph,
                baseline_plan_roughness=bpr,
                weights=weights,
            ))
    finally:
        if worker is not None:
            worker.stop()
    return SessionResult(plans, baseline_plans, metrics)
