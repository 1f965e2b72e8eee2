"""Trajectory cost terms, their weighted combination, and softmax selection.

Four per-trajectory costs: terrain height (mean absolute elevation derivative
along the path), roughness (mean of the roughness layer), deviation from the
reference (Gaussian-weighted distance plus heading error), and smoothness
(trapezoidal integral of squared curvature).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import Trajectory, resample_uniform, wrap_angle_array
from .errors import DataError
from .map_builder import FeatureMapStack, sample_layer

logger = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class CostWeights:
    """Nonnegative weights on the probability simplex (sum to 1)."""

    height: float
    roughness: float
    deviation: float
    smoothness: float

    def __post_init__(self):
        arr = self.as_array()
        if np.any(arr < 0):
            raise ValueError(f"weights must be nonnegative: {arr}")
        if abs(float(arr.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {arr.sum()!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.height, self.roughness, self.deviation, self.smoothness])

    @classmethod
    def uniform(cls) -> "CostWeights":
        return cls(0.25, 0.25, 0.25, 0.25)

    @classmethod
    def normalized(cls, height, roughness, deviation, smoothness) -> "CostWeights":
        """Project nonnegative values onto the simplex by dividing by their sum."""
        arr = np.array([height, roughness, deviation, smoothness], dtype=float)
        total = arr.sum()
        if total <= 0 or np.any(arr < 0):
            raise ValueError("normalized() needs nonnegative weights with positive sum")
        arr = arr / total
        return cls(*arr)


@dataclass(frozen=True)
class CostBreakdown:
    """The four per-trajectory cost scalars."""

    height: float
    roughness: float
    deviation: float
    smoothness: float

    def as_array(self) -> np.ndarray:
        return np.array([self.height, self.roughness, self.deviation, self.smoothness])


@dataclass
class DeviationParams:
    distance_weight: float = 0.8  # w_d
    heading_weight: float = 0.2  # w_theta
    num_points: int = 20  # equidistant comparison points N_p

    def __post_init__(self):
        if self.distance_weight < 0 or self.heading_weight < 0:
            raise ValueError("deviation weights must be >= 0")
        if self.num_points < 1:
            raise ValueError("num_points must be >= 1")


def height_cost(traj: Trajectory, stack: FeatureMapStack) -> float:
    """Mean absolute elevation derivative along the trajectory.

    Central finite differences on interior points, one-sided at the endpoints.
    Samples whose difference baseline is degenerate (coincident neighbor
    points) are skipped with a diagnostic.
    """
    if len(traj) < 2:
        raise DataError("height cost needs at least 2 points")
    z = sample_layer(stack.elevation, stack.spec, traj.x, traj.y, "trajectory point")
    n = len(traj)
    idx_hi = np.minimum(np.arange(n) + 1, n - 1)
    idx_lo = np.maximum(np.arange(n) - 1, 0)
    dz = z[idx_hi] - z[idx_lo]
    dist = np.hypot(traj.x[idx_hi] - traj.x[idx_lo], traj.y[idx_hi] - traj.y[idx_lo])
    ok = dist > 1e-12
    if not np.all(ok):
        logger.debug("height_cost: skipping %d degenerate samples", int(np.sum(~ok)))
    if not np.any(ok):
        raise DataError("height cost: all samples degenerate")
    return float(np.mean(np.abs(dz[ok] / dist[ok])))


def roughness_cost(traj: Trajectory, stack: FeatureMapStack) -> float:
    """Mean roughness-layer value over the trajectory points."""
    if len(traj) == 0:
        raise DataError("roughness cost needs at least 1 point")
    vals = sample_layer(stack.roughness, stack.spec, traj.x, traj.y, "trajectory point")
    return float(np.mean(vals))


def _closest_on_polyline(px: np.ndarray, py: np.ndarray, ref: Trajectory):
    """Per query point: distance to the reference polyline and the interpolated
    reference heading at the closest point."""
    ax, ay = ref.x[:-1], ref.y[:-1]
    bx, by = ref.x[1:], ref.y[1:]
    ex, ey = bx - ax, by - ay
    seg_len2 = ex * ex + ey * ey
    seg_len2 = np.where(seg_len2 > 0, seg_len2, 1.0)
    # (query, segment) projection parameters, clamped to the segment
    tx = (px[:, None] - ax[None, :]) * ex[None, :]
    ty = (py[:, None] - ay[None, :]) * ey[None, :]
    t = np.clip((tx + ty) / seg_len2[None, :], 0.0, 1.0)
    cx = ax[None, :] + t * ex[None, :]
    cy = ay[None, :] + t * ey[None, :]
    d2 = (px[:, None] - cx) ** 2 + (py[:, None] - cy) ** 2
    best = np.argmin(d2, axis=1)
    rows = np.arange(px.shape[0])
    dist = np.sqrt(d2[rows, best])
    tb = t[rows, best]
    h0 = np.unwrap(ref.heading)
    heading = wrap_angle_array(h0[best] * (1.0 - tb) + h0[best + 1] * tb)
    return dist, heading


def gaussian_weight(x) -> np.ndarray:
    """Standard normal density."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / SQRT_2PI


def deviation_cost(traj: Trajectory, reference: Trajectory,
                   params: Optional[DeviationParams] = None) -> float:
    """Gaussian-weighted deviation from the reference.

    The trajectory is resampled to num_points+1 equidistant points n=0..N_p;
    each contributes w_d * distance-to-reference + w_theta * |heading error|,
    weighted by the standard normal density of (1 - n/N_p), so points near the
    trajectory end carry the largest weight.
    """
    params = params or DeviationParams()
    if len(reference) < 2:
        raise DataError("deviation cost needs a reference with at least 2 points")
    n_p = params.num_points
    pts = resample_uniform(traj, n_p + 1)
    dist, ref_heading = _closest_on_polyline(pts.x, pts.y, reference)
    dtheta = np.abs(wrap_angle_array(pts.heading - ref_heading))
    j = params.distance_weight * dist + params.heading_weight * dtheta
    n = np.arange(n_p + 1)
    g = gaussian_weight(1.0 - n / n_p)
    return float(np.sum(g * j) / (n_p + 1))


def estimate_curvature(traj: Trajectory) -> np.ndarray:
    """Signed discrete curvature from circumscribed circles of point triples.

    Endpoints copy their interior neighbor.
    """
    n = len(traj)
    if n < 3:
        raise DataError("curvature estimation needs at least 3 points")
    p = traj.positions()
    a, b, c = p[:-2], p[1:-1], p[2:]
    ab = b - a
    bc = c - b
    ac = c - a
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = (np.linalg.norm(ab, axis=1) * np.linalg.norm(bc, axis=1)
             * np.linalg.norm(ac, axis=1))
    kappa = np.zeros(n - 2)
    ok = denom > 1e-12
    kappa[ok] = 2.0 * cross[ok] / denom[ok]
    return np.concatenate([[kappa[0]], kappa, [kappa[-1]]])


def smoothness_cost(traj: Trajectory, use_stored_curvature: bool = True) -> float:
    """Trapezoidal integral of squared curvature over arc length.

    Uses each state's stored curvature by default; pass
    use_stored_curvature=False to estimate curvature from the positions
    (three-point circumscribed circles) for raw trajectories.
    """
    if len(traj) < 3:
        raise DataError("smoothness cost needs at least 3 points")
    kappa = traj.curvature if use_stored_curvature else estimate_curvature(traj)
    ds = np.hypot(np.diff(traj.x), np.diff(traj.y))
    return float(np.sum((kappa[:-1] ** 2 + kappa[1:] ** 2) * ds / 2.0))


def total_cost(breakdown: CostBreakdown, weights: CostWeights) -> float:
    """Weighted combination of the four costs."""
    return float(np.dot(breakdown.as_array(), weights.as_array()))


def selection_probabilities(costs: Sequence[float]) -> np.ndarray:
    """Softmax over negated costs, max-shift stabilized; sums to 1."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise DataError("selection over an empty candidate list")
    if not np.all(np.isfinite(costs)):
        raise DataError("selection costs must be finite")
    z = -(costs - np.min(costs))
    e = np.exp(z)
    return e / e.sum()


def evaluate_candidate(traj: Trajectory, stack: FeatureMapStack, reference: Trajectory,
                       dev_params: Optional[DeviationParams] = None) -> CostBreakdown:
    """All four costs for one candidate trajectory."""
    return CostBreakdown(
        height=height_cost(traj, stack),
        roughness=roughness_cost(traj, stack),
        deviation=deviation_cost(traj, reference, dev_params),
        smoothness=smoothness_cost(traj),
    )


# Scale applied to cluster-mean-normalized costs. It sets how sharply the
# selection softmax discriminates candidates: per-component values average
# this constant, so total-cost gaps of a few tenths separate cleanly while
# the probabilities stay soft enough for gradient-based weight learning.
NORMALIZED_COST_SCALE = 6.0


def evaluate_candidates(members: Sequence[Trajectory], stack: FeatureMapStack,
                        reference: Trajectory,
                        dev_params: Optional[DeviationParams] = None,
                        normalize: bool = False) -> List[CostBreakdown]:
    """Cost breakdowns for a whole candidate set.

    With normalize=True, each cost component is divided by its mean over the
    set and multiplied by NORMALIZED_COST_SCALE, putting the four components
    on one comparable scale (components with zero mean are left as-is).
    """
    breakdowns = [evaluate_candidate(m, stack, reference, dev_params) for m in members]
    if normalize and breakdowns:
        mat = np.array([b.as_array() for b in breakdowns])
        means = mat.mean(axis=0)
        means[means <= 0] = 1.0
        mat = mat / means * NORMALIZED_COST_SCALE
        breakdowns = [CostBreakdown(*row) for row in mat]
    return breakdowns


def write_cost_report_csv(path, breakdowns: Sequence[CostBreakdown],
                          weights: CostWeights) -> None:
    """Per-cluster cost report: member,J_h,J_r,J_T,J_s,total,probability."""
    totals = [total_cost(b, weights) for b in breakdowns]
    probs = selection_probabilities(totals)
    lines = ["member,J_h,J_r,J_T,J_s,total,probability"]
    for i, (b, tot, p) in enumerate(zip(breakdowns, totals, probs)):
        lines.append(
            f"{i},{b.height:.9g},{b.roughness:.9g},{b.deviation:.9g},"
            f"{b.smoothness:.9g},{tot:.9g},{p:.9g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
