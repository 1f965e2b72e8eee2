"""Shared geometric and trajectory types plus local-frame transforms.

Conventions used everywhere in this package:
  - headings are radians measured CCW from the +x axis, normalized to (-pi, pi]
  - the vehicle frame has the vehicle at the origin pointing along +y,
    i.e. a forward-facing pose has heading pi/2
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .errors import DataError

FORWARD_HEADING = math.pi / 2  # +y axis

TRAJECTORY_COLUMNS = ("t", "x", "y", "heading", "speed", "curvature")


def wrap_angle(a: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


def wrap_angle_array(a: np.ndarray) -> np.ndarray:
    out = (np.asarray(a, dtype=float) + np.pi) % (2.0 * np.pi) - np.pi
    out[out <= -np.pi] += 2.0 * np.pi
    return out


def angle_difference(a: float, b: float) -> float:
    """Smallest signed difference a - b, wrapped into (-pi, pi]."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose. Heading is normalized on construction."""

    x: float
    y: float
    heading: float  # radians in (-pi, pi]

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class TimedState:
    """One trajectory sample."""

    t: float  # seconds
    pose: Pose2D
    speed: float  # m/s, >= 0
    curvature: float = 0.0  # 1/m

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")


@dataclass(frozen=True)
class VehicleState:
    """Ego state: pose plus planar velocity and path curvature."""

    pose: Pose2D
    velocity: tuple  # (v_x, v_y) m/s
    curvature: float = 0.0  # 1/m

    def __post_init__(self):
        vx, vy = self.velocity
        if not (math.isfinite(vx) and math.isfinite(vy)):
            raise ValueError("velocity components must be finite")

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned raster grid. origin is the corner of cell (0, 0)."""

    origin: Pose2D
    resolution: float  # m / cell
    width: int  # cells along x
    height: int  # cells along y

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be > 0")

    @property
    def extent(self):
        """(x_min, x_max, y_min, y_max) in meters."""
        return (
            self.origin.x,
            self.origin.x + self.width * self.resolution,
            self.origin.y,
            self.origin.y + self.height * self.resolution,
        )

    def cell_of(self, x, y):
        """(row, col) of the cell containing point(s) (x, y); may be out of range."""
        col = np.floor((np.asarray(x, dtype=float) - self.origin.x) / self.resolution).astype(int)
        row = np.floor((np.asarray(y, dtype=float) - self.origin.y) / self.resolution).astype(int)
        return row, col

    def contains(self, x, y):
        x_min, x_max, y_min, y_max = self.extent
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x >= x_min) & (x < x_max) & (y >= y_min) & (y < y_max)

    def cell_centers(self):
        """Meshgrid arrays (X, Y) of cell-center coordinates, shape (height, width)."""
        xs = self.origin.x + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin.y + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)


class Trajectory:
    """Time-stamped sequence of poses with speed and curvature.

    Backed by parallel numpy arrays; the ``states`` view materializes
    TimedState objects. Timestamps must be strictly increasing.
    """

    def __init__(self, states: Iterable[TimedState] = (), frame_id: str = "vehicle"):
        states = list(states)
        t = np.array([s.t for s in states], dtype=float)
        x = np.array([s.pose.x for s in states], dtype=float)
        y = np.array([s.pose.y for s in states], dtype=float)
        heading = np.array([s.pose.heading for s in states], dtype=float)
        speed = np.array([s.speed for s in states], dtype=float)
        curvature = np.array([s.curvature for s in states], dtype=float)
        self._init_arrays(t, x, y, heading, speed, curvature, frame_id)

    @classmethod
    def from_arrays(cls, t, x, y, heading, speed=None, curvature=None, frame_id="vehicle"):
        traj = cls.__new__(cls)
        t = np.asarray(t, dtype=float)
        n = t.shape[0]
        if speed is None:
            speed = np.zeros(n)
        if curvature is None:
            curvature = np.zeros(n)
        traj._init_arrays(
            t,
            np.asarray(x, dtype=float),
            np.asarray(y, dtype=float),
            wrap_angle_array(np.asarray(heading, dtype=float)),
            np.asarray(speed, dtype=float),
            np.asarray(curvature, dtype=float),
            frame_id,
        )
        return traj

    def _init_arrays(self, t, x, y, heading, speed, curvature, frame_id):
        n = t.shape[0]
        for name, arr in (("t", t), ("x", x), ("y", y), ("heading", heading),
                          ("speed", speed), ("curvature", curvature)):
            if arr.shape != (n,):
                raise ValueError(f"column {name} has shape {arr.shape}, expected ({n},)")
        if n > 0 and not np.all(np.isfinite(np.stack([x, y]))):
            raise ValueError("trajectory positions must be finite")
        if n > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        self.t = t
        self.x = x
        self.y = y
        self.heading = heading
        self.speed = speed
        self.curvature = curvature
        self.frame_id = frame_id

    def __len__(self) -> int:
        return self.t.shape[0]

    def positions(self) -> np.ndarray:
        """(N, 2) array of xy positions."""
        return np.column_stack([self.x, self.y])

    @property
    def states(self) -> List[TimedState]:
        return [
            TimedState(
                t=float(self.t[i]),
                pose=Pose2D(float(self.x[i]), float(self.y[i]), float(self.heading[i])),
                speed=float(self.speed[i]),
                curvature=float(self.curvature[i]),
            )
            for i in range(len(self))
        ]

    def state_at(self, i: int) -> TimedState:
        return TimedState(
            t=float(self.t[i]),
            pose=Pose2D(float(self.x[i]), float(self.y[i]), float(self.heading[i])),
            speed=float(self.speed[i]),
            curvature=float(self.curvature[i]),
        )

    def arc_lengths(self) -> np.ndarray:
        """Cumulative arc length along the polyline, starting at 0."""
        if len(self) == 0:
            return np.zeros(0)
        seg = np.hypot(np.diff(self.x), np.diff(self.y))
        return np.concatenate([[0.0], np.cumsum(seg)])

    def with_frame(self, frame_id: str) -> "Trajectory":
        return Trajectory.from_arrays(
            self.t, self.x, self.y, self.heading, self.speed, self.curvature, frame_id
        )


def transform_xy(x, y, origin: Pose2D):
    """Map world points into the frame where origin sits at (0,0) facing +y."""
    a = FORWARD_HEADING - origin.heading
    ca, sa = math.cos(a), math.sin(a)
    dx = np.asarray(x, dtype=float) - origin.x
    dy = np.asarray(y, dtype=float) - origin.y
    return ca * dx - sa * dy, sa * dx + ca * dy


def untransform_xy(x, y, origin: Pose2D):
    """Inverse of transform_xy."""
    a = FORWARD_HEADING - origin.heading
    ca, sa = math.cos(a), math.sin(a)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return ca * x + sa * y + origin.x, -sa * x + ca * y + origin.y


def to_vehicle_frame(traj: Trajectory, origin: Pose2D, frame_id: str = "vehicle") -> Trajectory:
    """Express a trajectory in the frame anchored at origin, +y forward.

    Rigid transform: origin maps to (0, 0) and its heading to pi/2.
    Timestamps, speeds, and curvatures are unchanged.
    """
    if len(traj) == 0:
        return Trajectory([], frame_id=frame_id)
    a = FORWARD_HEADING - origin.heading
    x, y = transform_xy(traj.x, traj.y, origin)
    return Trajectory.from_arrays(
        traj.t, x, y, traj.heading + a, traj.speed, traj.curvature, frame_id
    )


def from_vehicle_frame(traj: Trajectory, origin: Pose2D, frame_id: str = "world") -> Trajectory:
    """Inverse of to_vehicle_frame."""
    if len(traj) == 0:
        return Trajectory([], frame_id=frame_id)
    a = FORWARD_HEADING - origin.heading
    x, y = untransform_xy(traj.x, traj.y, origin)
    return Trajectory.from_arrays(
        traj.t, x, y, traj.heading - a, traj.speed, traj.curvature, frame_id
    )


def transform_pose(pose: Pose2D, origin: Pose2D) -> Pose2D:
    a = FORWARD_HEADING - origin.heading
    x, y = transform_xy(pose.x, pose.y, origin)
    return Pose2D(float(x), float(y), pose.heading + a)


def untransform_pose(pose: Pose2D, origin: Pose2D) -> Pose2D:
    a = FORWARD_HEADING - origin.heading
    x, y = untransform_xy(pose.x, pose.y, origin)
    return Pose2D(float(x), float(y), pose.heading - a)


def _interp_angle(arc, arc_pts, headings):
    unwrapped = np.unwrap(headings)
    return wrap_angle_array(np.interp(arc, arc_pts, unwrapped))


def resample_uniform(traj: Trajectory, n: int) -> Trajectory:
    """Resample to n states equally spaced by arc length.

    Endpoints are preserved exactly; t, speed, heading, and curvature are
    interpolated along the arc (headings through the shorter angular path).
    """
    if len(traj) < 2:
        raise DataError("resampling needs at least 2 states")
    if n < 2:
        raise DataError("resampling needs n >= 2")
    arc = traj.arc_lengths()
    total = float(arc[-1])
    if total <= 0.0:
        raise DataError("cannot resample a zero-length trajectory")
    # collapse repeated arc positions so np.interp sees increasing abscissae
    keep = np.concatenate([[True], np.diff(arc) > 0])
    arc_k = arc[keep]
    targets = np.linspace(0.0, total, n)
    x = np.interp(targets, arc_k, traj.x[keep])
    y = np.interp(targets, arc_k, traj.y[keep])
    t = np.interp(targets, arc_k, traj.t[keep])
    speed = np.interp(targets, arc_k, traj.speed[keep])
    curvature = np.interp(targets, arc_k, traj.curvature[keep])
    heading = _interp_angle(targets, arc_k, traj.heading[keep])
    # endpoint fidelity regardless of float roundoff in the interpolation
    x[0], y[0], x[-1], y[-1] = traj.x[0], traj.y[0], traj.x[-1], traj.y[-1]
    if len(np.unique(t)) < len(t):
        # time stalls while the path advances; spread minimally to keep t strict
        t = t + np.arange(n) * 1e-9
    return Trajectory.from_arrays(t, x, y, heading, speed, curvature, traj.frame_id)


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Write the trajectory CSV wire format: t,x,y,heading,speed,curvature."""
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for i in range(len(traj)):
        lines.append(
            ",".join(
                format(v, ".17g")
                for v in (traj.t[i], traj.x[i], traj.y[i], traj.heading[i],
                          traj.speed[i], traj.curvature[i])
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path, frame_id: str = "vehicle") -> Trajectory:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise DataError(f"{path}: empty trajectory file")
    header = tuple(h.strip() for h in text[0].split(","))
    if header != TRAJECTORY_COLUMNS:
        raise DataError(f"{path}: expected header {','.join(TRAJECTORY_COLUMNS)}")
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    arr = np.array(rows, dtype=float).reshape(-1, 6)
    return Trajectory.from_arrays(
        arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5], frame_id
    )
