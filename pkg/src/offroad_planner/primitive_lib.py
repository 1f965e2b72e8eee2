"""Offline behavioral-primitive library, concatenation, and trajectory clusters.

Primitives are short feasible motion segments of a kinematic unicycle
(state x, y, heading, speed, curvature; controls curvature rate and
acceleration, piecewise constant over a few segments). They are generated
per entry-state bin by a coarse control grid search refined by local
descent on a smoothness objective, then chained and windowed online into
fixed-horizon candidate trajectory clusters.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    FORWARD_HEADING,
    Pose2D,
    Trajectory,
    VehicleState,
    read_trajectory_csv,
    resample_uniform,
    wrap_angle,
    write_trajectory_csv,
)
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

BEHAVIORS = ("straight", "left_turn", "right_turn", "accelerate", "decelerate")


@dataclass
class PrimitiveGenSpec:
    """Kinematic model bounds, control grid, and behavior targets."""

    v_max: float = 10.0  # m/s
    kappa_max: float = 0.2  # 1/m
    kappa_rate_max: float = 0.1  # 1/m/s
    accel_max: float = 1.0  # m/s^2
    segments: int = 4
    segment_duration: float = 1.0  # s
    sample_dt: float = 0.1  # s between stored states
    integration_substeps: int = 3
    speed_bin: float = 1.0  # m/s
    curvature_bin: float = 0.05  # 1/m
    min_path_length: float = 0.5  # m, rejects degenerate profiles
    # exit-state family tolerances
    straight_kappa_tol: float = 0.02
    straight_speed_tol: float = 0.3
    turn_kappa_min: float = 0.06
    speed_change_min: float = 0.8
    speed_change_kappa_tol: float = 0.05

    def __post_init__(self):
        for name in ("v_max", "kappa_max", "kappa_rate_max", "accel_max",
                     "segment_duration", "sample_dt", "speed_bin", "curvature_bin"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.segments < 1:
            raise ConfigError("segments must be >= 1")
        steps = self.segment_duration / self.sample_dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("segment_duration must be a multiple of sample_dt")

    @property
    def duration(self) -> float:
        return self.segments * self.segment_duration

    @property
    def num_speed_bins(self) -> int:
        return int(round(self.v_max / self.speed_bin)) + 1

    @property
    def num_curvature_bins(self) -> int:
        return 2 * int(round(self.kappa_max / self.curvature_bin)) + 1

    def speed_center(self, i: int) -> float:
        return i * self.speed_bin

    def curvature_center(self, j: int) -> float:
        return -self.kappa_max + j * self.curvature_bin

    def bin_of(self, speed: float, curvature: float) -> Tuple[int, int]:
        i = int(np.clip(round(speed / self.speed_bin), 0, self.num_speed_bins - 1))
        j = int(np.clip(round((curvature + self.kappa_max) / self.curvature_bin),
                        0, self.num_curvature_bins - 1))
        return i, j

    def exit_family(self, entry_speed, exit_speed, exit_kappa) -> List[str]:
        """Behavior families an exit state belongs to."""
        masks = self.family_masks(np.asarray(entry_speed, dtype=float),
                                  np.asarray(exit_speed, dtype=float),
                                  np.asarray(exit_kappa, dtype=float))
        return [name for name, mask in masks.items() if bool(mask)]

    def family_masks(self, entry_speed, exit_speed, exit_kappa) -> Dict[str, np.ndarray]:
        """Vectorized exit-state family membership."""
        dv = exit_speed - entry_speed
        abs_k = np.abs(exit_kappa)
        return {
            "straight": (abs_k <= self.straight_kappa_tol)
                        & (np.abs(dv) <= self.straight_speed_tol),
            "left_turn": exit_kappa >= self.turn_kappa_min,
            "right_turn": exit_kappa <= -self.turn_kappa_min,
            "accelerate": (dv >= self.speed_change_min)
                          & (abs_k <= self.speed_change_kappa_tol),
            "decelerate": (dv <= -self.speed_change_min)
                          & (abs_k <= self.speed_change_kappa_tol),
        }


def integrate_profiles(entry_speed: np.ndarray, entry_curvature: np.ndarray,
                       curvature_rates: np.ndarray, accelerations: np.ndarray,
                       spec: PrimitiveGenSpec) -> np.ndarray:
    """Integrate piecewise-constant control profiles with fixed-step RK4.

    Inputs are batched: entry_speed/entry_curvature have shape (P,), the
    control arrays (P, segments). Returns states (P, n_samples, 5) ordered
    x, y, heading, speed, curvature, starting at the origin facing +y.
    """
    entry_speed = np.atleast_1d(np.asarray(entry_speed, dtype=float))
    entry_curvature = np.atleast_1d(np.asarray(entry_curvature, dtype=float))
    p = entry_speed.shape[0]
    per_seg = int(round(spec.segment_duration / spec.sample_dt))
    n_samples = spec.segments * per_seg + 1
    dt = spec.sample_dt / spec.integration_substeps

    s = np.zeros((p, 5))
    s[:, 2] = FORWARD_HEADING
    s[:, 3] = entry_speed
    s[:, 4] = entry_curvature
    out = np.empty((p, n_samples, 5))
    out[:, 0] = s

    def deriv(state, sigma, acc):
        d = np.empty_like(state)
        d[:, 0] = state[:, 3] * np.cos(state[:, 2])
        d[:, 1] = state[:, 3] * np.sin(state[:, 2])
        d[:, 2] = state[:, 3] * state[:, 4]
        d[:, 3] = acc
        d[:, 4] = sigma
        return d

    for k in range(1, n_samples):
        seg = min((k - 1) // per_seg, spec.segments - 1)
        sigma = curvature_rates[:, seg]
        acc = accelerations[:, seg]
        for _ in range(spec.integration_substeps):
            k1 = deriv(s, sigma, acc)
            k2 = deriv(s + 0.5 * dt * k1, sigma, acc)
            k3 = deriv(s + 0.5 * dt * k2, sigma, acc)
            k4 = deriv(s + dt * k3, sigma, acc)
            s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, k] = s
    return out


def states_to_trajectory(states: np.ndarray, sample_dt: float,
                         frame_id: str = "primitive") -> Trajectory:
    """(N, 5) state rows -> Trajectory sampled at sample_dt."""
    n = states.shape[0]
    t = np.arange(n) * sample_dt
    return Trajectory.from_arrays(
        t, states[:, 0], states[:, 1], states[:, 2], states[:, 3], states[:, 4],
        frame_id=frame_id,
    )


@dataclass
class BehavioralPrimitive:
    """One feasible motion segment anchored at the origin facing +y."""

    entry_bin: Tuple[int, int]
    behavior: str
    entry_speed: float
    entry_curvature: float
    controls: np.ndarray  # (segments, 2): curvature rate, acceleration
    trajectory: Trajectory
    objective_value: float  # integral of squared controls

    @property
    def exit_speed(self) -> float:
        return float(self.trajectory.speed[-1])

    @property
    def exit_curvature(self) -> float:
        return float(self.trajectory.curvature[-1])

    def exit_pose(self) -> Pose2D:
        tr = self.trajectory
        return Pose2D(float(tr.x[-1]), float(tr.y[-1]), float(tr.heading[-1]))


def _bounds_ok(states: np.ndarray, spec: PrimitiveGenSpec, tol: float = 1e-9) -> np.ndarray:
    v = states[:, :, 3]
    k = states[:, :, 4]
    return (
        (v.min(axis=1) >= -tol)
        & (v.max(axis=1) <= spec.v_max + tol)
        & (np.abs(k).max(axis=1) <= spec.kappa_max + tol)
    )


def _path_lengths(states: np.ndarray) -> np.ndarray:
    d = np.hypot(np.diff(states[:, :, 0], axis=1), np.diff(states[:, :, 1], axis=1))
    return d.sum(axis=1)


def _objective(curvature_rates: np.ndarray, accelerations: np.ndarray,
               segment_duration: float) -> np.ndarray:
    return (curvature_rates ** 2 + accelerations ** 2).sum(axis=1) * segment_duration


def _control_grid(spec: PrimitiveGenSpec):
    """Coarse piecewise-constant control profiles: per-segment curvature-rate
    choices crossed with constant acceleration levels."""
    sig_levels = np.array([-0.5, 0.0, 0.5]) * spec.kappa_rate_max
    acc_levels = np.array([-1.0, -0.5, 0.0, 0.5, 1.0]) * spec.accel_max
    sig_profiles = np.array(
        np.meshgrid(*([sig_levels] * spec.segments), indexing="ij")
    ).reshape(spec.segments, -1).T  # (3^segments, segments)
    sigs = np.repeat(sig_profiles, len(acc_levels), axis=0)
    accs = np.tile(acc_levels, sig_profiles.shape[0])
    accs = np.repeat(accs[:, None], spec.segments, axis=1)
    return sigs, accs


def _refine_all(entry_speed: np.ndarray, entry_curvature: np.ndarray,
                behaviors: List[str], sigs: np.ndarray, accs: np.ndarray,
                objectives: np.ndarray, spec: PrimitiveGenSpec,
                rounds: int = 4) -> Tuple[np.ndarray, np.ndarray]:
    """Coordinate descent on the smoothness objective for all winners at once.

    Each round perturbs every control coordinate of every winner by its
    current step (one big batched integration), keeps the best feasible
    improvement per winner, and halves the step where nothing improved.
    """
    n_win = sigs.shape[0]
    n_seg = spec.segments
    per = 4 * n_seg  # +/- per sigma and accel coordinate
    best_s = sigs.copy()
    best_a = accs.copy()
    best_obj = objectives.copy()
    step_s = np.full(n_win, spec.kappa_rate_max / 4.0)
    step_a = np.full(n_win, spec.accel_max / 4.0)

    for _ in range(rounds):
        cand_s = np.repeat(best_s, per, axis=0).reshape(n_win, per, n_seg)
        cand_a = np.repeat(best_a, per, axis=0).reshape(n_win, per, n_seg)
        k = 0
        for seg in range(n_seg):
            cand_s[:, k, seg] += step_s
            cand_s[:, k + 1, seg] -= step_s
            cand_a[:, k + 2, seg] += step_a
            cand_a[:, k + 3, seg] -= step_a
            k += 4
        cand_s = np.clip(cand_s, -spec.kappa_rate_max, spec.kappa_rate_max)
        cand_a = np.clip(cand_a, -spec.accel_max, spec.accel_max)
        flat_s = cand_s.reshape(-1, n_seg)
        flat_a = cand_a.reshape(-1, n_seg)
        states = integrate_profiles(
            np.repeat(entry_speed, per), np.repeat(entry_curvature, per),
            flat_s, flat_a, spec,
        )
        ok = _bounds_ok(states, spec) & (_path_lengths(states) >= spec.min_path_length)
        exit_v = states[:, -1, 3]
        exit_k = states[:, -1, 4]
        objs = _objective(flat_s, flat_a, spec.segment_duration)
        for w in range(n_win):
            rows = np.arange(w * per, (w + 1) * per)
            cand_objs = objs[rows]
            improved = False
            for o in np.argsort(cand_objs):
                if cand_objs[o] >= best_obj[w] - 1e-12:
                    break  # sorted ascending; nothing better remains
                r = rows[o]
                if not ok[r]:
                    continue
                if behaviors[w] in spec.exit_family(entry_speed[w], exit_v[r], exit_k[r]):
                    best_s[w] = flat_s[r]
                    best_a[w] = flat_a[r]
                    best_obj[w] = float(cand_objs[o])
                    improved = True
                    break
            if not improved:
                step_s[w] /= 2.0
                step_a[w] /= 2.0
    return best_s, best_a


class PrimitiveLibrary:
    """Primitives grouped by entry-state bin (speed x curvature grid)."""

    def __init__(self, spec: PrimitiveGenSpec,
                 entries: Dict[Tuple[int, int], Dict[str, BehavioralPrimitive]]):
        if not entries or all(not v for v in entries.values()):
            raise DataError("primitive library is empty")
        empty = [b for b, prims in entries.items() if not prims]
        if empty:
            raise DataError(f"bins without any feasible primitive: {empty}")
        self.spec = spec
        self.entries = entries
        self._window_cache: Dict[Tuple, List["CandidateWindow"]] = {}

    @property
    def size(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def bin_of(self, state: VehicleState) -> Tuple[int, int]:
        return self.spec.bin_of(state.speed, state.curvature)

    def primitives_in(self, entry_bin: Tuple[int, int]) -> List[BehavioralPrimitive]:
        return list(self.entries.get(tuple(entry_bin), {}).values())

    # ----- persistence ---------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        spec_dict = {k: (v if not isinstance(v, np.ndarray) else v.tolist())
                     for k, v in vars(self.spec).items()}
        index = {"spec": spec_dict, "primitives": []}
        for (i, j), prims in sorted(self.entries.items()):
            for behavior, prim in sorted(prims.items()):
                name = f"prim_{i}_{j}_{behavior}.csv"
                write_trajectory_csv(directory / name, prim.trajectory)
                index["primitives"].append({
                    "bin": [i, j],
                    "behavior": behavior,
                    "entry_speed": prim.entry_speed,
                    "entry_curvature": prim.entry_curvature,
                    "controls": prim.controls.tolist(),
                    "objective": prim.objective_value,
                    "csv": name,
                })
        (directory / "library.json").write_text(json.dumps(index, indent=1))

    @classmethod
    def load(cls, directory) -> "PrimitiveLibrary":
        directory = Path(directory)
        index_path = directory / "library.json"
        if not index_path.exists():
            raise DataError(f"{index_path} not found")
        index = json.loads(index_path.read_text())
        spec = PrimitiveGenSpec(**index["spec"])
        entries: Dict[Tuple[int, int], Dict[str, BehavioralPrimitive]] = {}
        for rec in index["primitives"]:
            prim = BehavioralPrimitive(
                entry_bin=tuple(rec["bin"]),
                behavior=rec["behavior"],
                entry_speed=rec["entry_speed"],
                entry_curvature=rec["entry_curvature"],
                controls=np.array(rec["controls"], dtype=float),
                trajectory=read_trajectory_csv(directory / rec["csv"], "primitive"),
                objective_value=rec["objective"],
            )
            entries.setdefault(tuple(rec["bin"]), {})[rec["behavior"]] = prim
        return cls(spec, entries)


def generate_primitives(spec: PrimitiveGenSpec,
                        entry_bins: Optional[Sequence[Tuple[int, int]]] = None
                        ) -> PrimitiveLibrary:
    """Build the library: grid search + local descent per (bin, behavior).

    Bins with no feasible profile for some behavior omit that pair with a
    diagnostic; a bin with no feasible behavior at all fails the build.
    """
    if entry_bins is None:
        entry_bins = [
            (i, j)
            for i in range(spec.num_speed_bins)
            for j in range(spec.num_curvature_bins)
        ]
    sig_profiles, acc_profiles = _control_grid(spec)
    per_bin = sig_profiles.shape[0]

    all_v, all_k = [], []
    for (i, j) in entry_bins:
        all_v.append(np.full(per_bin, spec.speed_center(i)))
        all_k.append(np.full(per_bin, spec.curvature_center(j)))
    v0 = np.concatenate(all_v)
    k0 = np.concatenate(all_k)
    sigs = np.tile(sig_profiles, (len(entry_bins), 1))
    accs = np.tile(acc_profiles, (len(entry_bins), 1))

    states = integrate_profiles(v0, k0, sigs, accs, spec)
    feasible = _bounds_ok(states, spec) & (_path_lengths(states) >= spec.min_path_length)
    objs = _objective(sigs, accs, spec.segment_duration)

    # grid winners per (bin, behavior)
    masks = spec.family_masks(v0, states[:, -1, 3], states[:, -1, 4])
    winners: List[Tuple[Tuple[int, int], str, int]] = []
    omitted = []
    for b, (i, j) in enumerate(entry_bins):
        lo = b * per_bin
        block = slice(lo, lo + per_bin)
        for behavior in BEHAVIORS:
            eligible = feasible[block] & masks[behavior][block]
            if not np.any(eligible):
                omitted.append(((i, j), behavior))
                continue
            block_objs = np.where(eligible, objs[block], np.inf)
            winners.append(((i, j), behavior, lo + int(np.argmin(block_objs))))
    if omitted:
        logger.info("primitive generation omitted %d infeasible (bin, behavior) pairs",
                    len(omitted))
    if not winners:
        raise DataError("no feasible primitive for any requested bin")

    win_v = np.array([spec.speed_center(bn[0]) for bn, _, _ in winners])
    win_k = np.array([spec.curvature_center(bn[1]) for bn, _, _ in winners])
    win_behaviors = [behavior for _, behavior, _ in winners]
    win_s = np.array([sigs[row] for _, _, row in winners])
    win_a = np.array([accs[row] for _, _, row in winners])
    win_obj = np.array([objs[row] for _, _, row in winners])
    ref_s, ref_a = _refine_all(win_v, win_k, win_behaviors, win_s, win_a, win_obj, spec)
    final_states = integrate_profiles(win_v, win_k, ref_s, ref_a, spec)

    entries: Dict[Tuple[int, int], Dict[str, BehavioralPrimitive]] = {}
    for w, (bn, behavior, _row) in enumerate(winners):
        entries.setdefault(bn, {})[behavior] = BehavioralPrimitive(
            entry_bin=bn,
            behavior=behavior,
            entry_speed=float(win_v[w]),
            entry_curvature=float(win_k[w]),
            controls=np.column_stack([ref_s[w], ref_a[w]]),
            trajectory=states_to_trajectory(final_states[w], spec.sample_dt),
            objective_value=float(_objective(ref_s[w][None, :], ref_a[w][None, :],
                                             spec.segment_duration)[0]),
        )
    empty_bins = [bn for bn in entry_bins if bn not in entries]
    if empty_bins:
        raise DataError(f"no feasible primitive for bins {empty_bins[:5]}...")
    return PrimitiveLibrary(spec, entries)


def reintegrate(prim: BehavioralPrimitive, spec: PrimitiveGenSpec) -> Trajectory:
    """Re-run the integrator on a primitive's stored controls."""
    states = integrate_profiles(
        np.array([prim.entry_speed]), np.array([prim.entry_curvature]),
        prim.controls[:, 0][None, :], prim.controls[:, 1][None, :], spec,
    )[0]
    return states_to_trajectory(states, spec.sample_dt)


def concatenate(a: BehavioralPrimitive, b: BehavioralPrimitive,
                spec: Optional[PrimitiveGenSpec] = None) -> Trajectory:
    """Join two primitives, rigidly moving b so its entry matches a's exit.

    b's entry-state bin must contain a's exit speed and curvature within one
    half bin; position and heading are continuous at the junction by
    construction, and b's timestamps continue a's.
    """
    if spec is not None:
        dv = abs(a.exit_speed - b.entry_speed)
        dk = abs(a.exit_curvature - b.entry_curvature)
        if dv > spec.speed_bin / 2 + 1e-9 or dk > spec.curvature_bin / 2 + 1e-9:
            raise DataError(
                f"incompatible junction: exit (v={a.exit_speed:.3f}, k={a.exit_curvature:.3f}) "
                f"not in bin of (v={b.entry_speed:.3f}, k={b.entry_curvature:.3f})"
            )
    ta, tb = a.trajectory, b.trajectory
    rot = float(ta.heading[-1]) - float(tb.heading[0])
    c, s = math.cos(rot), math.sin(rot)
    bx = tb.x - tb.x[0]
    by = tb.y - tb.y[0]
    x = c * bx - s * by + ta.x[-1]
    y = s * bx + c * by + ta.y[-1]
    heading = tb.heading + rot
    t = tb.t - tb.t[0] + ta.t[-1]
    return Trajectory.from_arrays(
        np.concatenate([ta.t, t[1:]]),
        np.concatenate([ta.x, x[1:]]),
        np.concatenate([ta.y, y[1:]]),
        np.concatenate([ta.heading, heading[1:]]),
        np.concatenate([ta.speed, tb.speed[1:]]),
        np.concatenate([ta.curvature, tb.curvature[1:]]),
        frame_id="primitive",
    )


@dataclass
class CandidateWindow:
    """A fixed-horizon slice of a primitive concatenation, pre-transform."""

    arrays: np.ndarray  # (H, 5): x, y, heading, speed, curvature
    start_speed: float
    start_curvature: float
    source: str
    objective: float  # combined source-primitive smoothness objective


@dataclass
class TrajectoryCluster:
    """m horizon-length candidates re-expressed from one vehicle pose."""

    members: List[Trajectory]
    sources: List[str]
    entry_bin: Tuple[int, int]

    def __len__(self):
        return len(self.members)


def _windows_for_bin(library: PrimitiveLibrary, entry_bin: Tuple[int, int],
                     horizon: int, offset_step: int) -> List[CandidateWindow]:
    key = (entry_bin, horizon, offset_step)
    cached = library._window_cache.get(key)
    if cached is not None:
        return cached
    spec = library.spec
    windows: List[CandidateWindow] = []
    for p in library.primitives_in(entry_bin):
        next_bin = spec.bin_of(p.exit_speed, p.exit_curvature)
        for q in library.primitives_in(next_bin):
            joined = concatenate(p, q, spec)
            total = len(joined)
            n_off = max(total - horizon, 0)
            offs = list(range(0, n_off + 1, offset_step)) if total >= horizon else []
            for off in offs:
                sl = slice(off, off + horizon)
                arrays = np.column_stack([
                    joined.x[sl], joined.y[sl], joined.heading[sl],
                    joined.speed[sl], joined.curvature[sl],
                ])
                windows.append(CandidateWindow(
                    arrays=arrays,
                    start_speed=float(joined.speed[off]),
                    start_curvature=float(joined.curvature[off]),
                    source=f"bin{entry_bin}:{p.behavior}+{q.behavior}@{off * spec.sample_dt:.1f}s",
                    objective=p.objective_value + q.objective_value,
                ))
    if len(library._window_cache) > 64:
        library._window_cache.clear()
    library._window_cache[key] = windows
    return windows


def _transform_window(win: CandidateWindow, pose: Pose2D, sample_dt: float) -> Trajectory:
    """Re-express a window so its first state sits at pose, timestamps from 0."""
    rot = pose.heading - float(win.arrays[0, 2])
    c, s = math.cos(rot), math.sin(rot)
    x0, y0 = win.arrays[0, 0], win.arrays[0, 1]
    dx = win.arrays[:, 0] - x0
    dy = win.arrays[:, 1] - y0
    x = c * dx - s * dy + pose.x
    y = s * dx + c * dy + pose.y
    h = win.arrays[:, 2] + rot
    t = np.arange(win.arrays.shape[0]) * sample_dt
    return Trajectory.from_arrays(t, x, y, h, win.arrays[:, 3], win.arrays[:, 4])


def mean_pointwise_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean Euclidean distance between index-matched (N, 2) position arrays."""
    return float(np.mean(np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])))


def extract_clusters(library: PrimitiveLibrary, state: VehicleState,
                     horizon: int = 60, m: int = 16,
                     offset_step: int = 3) -> TrajectoryCluster:
    """Fixed-horizon candidate cluster for a vehicle state.

    Slides a horizon window over concatenated primitive pairs of the state's
    bin, keeps windows whose start speed/curvature lie within one bin of the
    state, re-expresses them from the vehicle pose, and picks m diverse
    members by farthest-point selection on mean pointwise distance. Member 0
    is the smoothest (reference-aligned straight when feasible) candidate.
    """
    spec = library.spec
    entry_bin = library.bin_of(state)
    if not library.primitives_in(entry_bin):
        raise DataError(f"library does not cover bin {entry_bin}")
    windows = _windows_for_bin(library, entry_bin, horizon, offset_step)
    speed = state.speed
    kept = [
        w for w in windows
        if abs(w.start_speed - speed) <= spec.speed_bin + 1e-9
        and abs(w.start_curvature - state.curvature) <= spec.curvature_bin + 1e-9
    ]
    if not kept:
        raise DataError(f"no candidate windows near state in bin {entry_bin}")

    candidates = [_transform_window(w, state.pose, spec.sample_dt) for w in kept]
    # drop duplicates (identical geometry from different window offsets)
    seen = {}
    uniq_idx = []
    for idx, cand in enumerate(candidates):
        key = np.round(cand.positions(), 9).tobytes()
        if key not in seen:
            seen[key] = idx
            uniq_idx.append(idx)
    candidates = [candidates[i] for i in uniq_idx]
    kept = [kept[i] for i in uniq_idx]

    if len(candidates) < m:
        logger.warning("cluster for bin %s has only %d distinct candidates (wanted %d)",
                       entry_bin, len(candidates), m)

    # member 0: minimum-smoothness candidate, straightest on ties
    mean_abs_kappa = [float(np.mean(np.abs(c.curvature))) for c in candidates]
    order = sorted(range(len(candidates)),
                   key=lambda i: (kept[i].objective, mean_abs_kappa[i], i))
    first = order[0]

    positions = np.stack([c.positions() for c in candidates])
    selected = [first]
    min_dist = np.mean(
        np.hypot(positions[:, :, 0] - positions[first, None, :, 0],
                 positions[:, :, 1] - positions[first, None, :, 1]),
        axis=1,
    )
    while len(selected) < min(m, len(candidates)):
        nxt = int(np.argmax(min_dist))
        if min_dist[nxt] <= 0 and len(selected) < len(candidates):
            remaining = [i for i in range(len(candidates)) if i not in selected]
            nxt = remaining[0]
        selected.append(nxt)
        d = np.mean(
            np.hypot(positions[:, :, 0] - positions[nxt, None, :, 0],
                     positions[:, :, 1] - positions[nxt, None, :, 1]),
            axis=1,
        )
        min_dist = np.minimum(min_dist, d)
        min_dist[selected] = -1.0

    return TrajectoryCluster(
        members=[candidates[i] for i in selected],
        sources=[kept[i].source for i in selected],
        entry_bin=entry_bin,
    )


def match_to_cluster(raw: Trajectory, cluster: TrajectoryCluster):
    """Nearest cluster member to a raw trajectory.

    Returns (index, fitted member, distance) where distance is the mean
    pointwise Euclidean distance after resampling raw to the horizon length
    (trajectories already at horizon length are compared as-is). Ties break
    to the lowest index.
    """
    if len(cluster.members) == 0:
        raise DataError("cannot match against an empty cluster")
    if len(raw) < 2:
        raise DataError("raw trajectory needs at least 2 states")
    horizon = len(cluster.members[0])
    probe = raw if len(raw) == horizon else resample_uniform(raw, horizon)
    p = probe.positions()
    dists = np.array([
        mean_pointwise_distance(p, mem.positions()) for mem in cluster.members
    ])
    best = int(np.argmin(dists))
    return best, cluster.members[best], float(dists[best])
