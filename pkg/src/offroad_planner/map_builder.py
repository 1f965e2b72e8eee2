"""Rasterize point clouds into per-cell statistics and build the feature map stack.

Layers (all co-registered on one GridSpec):
  elevation  - per-cell mean z (meters)
  roughness  - per-cell mean squared deviation of z (meters^2)
  obstacle   - binary, 1 where the per-cell max z difference exceeds a threshold
  potential  - attractive field toward the guide point plus repulsion from obstacles
  momentum   - directional reachability from the current velocity
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .core import GridSpec, Pose2D, Trajectory, VehicleState
from .errors import ConfigError, DataError, InfeasibleError


class PointCloud:
    """Unordered xyz points, meters."""

    def __init__(self, points):
        arr = np.asarray(points, dtype=float).reshape(-1, 3)
        if arr.size and not np.all(np.isfinite(arr)):
            raise DataError("point cloud contains non-finite coordinates")
        self.points = arr

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def read_xyz(cls, path) -> "PointCloud":
        """Read ASCII 'x y z' lines."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
        return cls(np.array(rows, dtype=float).reshape(-1, 3))

    def write_xyz(self, path) -> None:
        lines = [" ".join(format(v, ".17g") for v in p) for p in self.points]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


@dataclass
class GridStats:
    """Per-cell z statistics of a rasterized cloud. Arrays are (height, width)."""

    spec: GridSpec
    n: np.ndarray  # point count per cell
    mu: np.ndarray  # mean z
    delta: np.ndarray  # mean squared deviation of z
    eps: np.ndarray  # max z - min z
    filled: np.ndarray  # bool occupancy
    dropped_points: int = 0  # out-of-bounds tally


@dataclass
class PotentialParams:
    attract_gain: float = 0.2
    repel_gain: float = 50.0
    attract_radius: float = 20.0  # quadratic/linear switch distance d*
    repel_radius: float = 10.0  # obstacle influence cutoff D*

    def __post_init__(self):
        for name in ("attract_gain", "repel_gain", "attract_radius", "repel_radius"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")


@dataclass
class MomentumParams:
    gain: float = 42.0

    def __post_init__(self):
        if self.gain <= 0:
            raise ConfigError("momentum gain must be > 0")


@dataclass
class FeatureMapStack:
    """Five co-registered layers plus the guide point, one shared GridSpec."""

    spec: GridSpec
    elevation: np.ndarray
    roughness: np.ndarray
    obstacle: np.ndarray
    potential: np.ndarray
    momentum: np.ndarray
    guide_point: Pose2D

    def __post_init__(self):
        shape = (self.spec.height, self.spec.width)
        for name in ("elevation", "roughness", "obstacle", "potential", "momentum"):
            layer = getattr(self, name)
            if layer.shape != shape:
                raise ValueError(f"layer {name} has shape {layer.shape}, expected {shape}")

    def layers(self):
        return {
            "elevation": self.elevation,
            "roughness": self.roughness,
            "obstacle": self.obstacle,
            "potential": self.potential,
            "momentum": self.momentum,
        }


def rasterize(cloud: PointCloud, spec: GridSpec) -> GridStats:
    """Project points onto the grid and accumulate per-cell z statistics."""
    h, w = spec.height, spec.width
    pts = cloud.points
    if pts.shape[0] == 0:
        zero = np.zeros((h, w))
        return GridStats(spec, np.zeros((h, w), dtype=int), zero.copy(), zero.copy(),
                         zero.copy(), np.zeros((h, w), dtype=bool), 0)
    inb = spec.contains(pts[:, 0], pts[:, 1])
    dropped = int(np.count_nonzero(~inb))
    pts = pts[inb]
    row, col = spec.cell_of(pts[:, 0], pts[:, 1])
    flat = row * w + col
    z = pts[:, 2]
    ncells = h * w
    n = np.bincount(flat, minlength=ncells).astype(int)
    zsum = np.bincount(flat, weights=z, minlength=ncells)
    zsq = np.bincount(flat, weights=z * z, minlength=ncells)
    zmax = np.full(ncells, -np.inf)
    zmin = np.full(ncells, np.inf)
    np.maximum.at(zmax, flat, z)
    np.minimum.at(zmin, flat, z)
    filled = n > 0
    mu = np.zeros(ncells)
    delta = np.zeros(ncells)
    eps = np.zeros(ncells)
    mu[filled] = zsum[filled] / n[filled]
    # population form: mean of squared deviations
    delta[filled] = np.maximum(zsq[filled] / n[filled] - mu[filled] ** 2, 0.0)
    eps[filled] = zmax[filled] - zmin[filled]
    return GridStats(
        spec,
        n.reshape(h, w),
        mu.reshape(h, w),
        delta.reshape(h, w),
        eps.reshape(h, w),
        filled.reshape(h, w),
        dropped,
    )


def _check_nested(specs: Sequence[GridSpec]) -> None:
    if len(specs) != 3:
        raise ConfigError("fill_multires expects exactly 3 grid specs")
    for a, b in zip(specs, specs[1:]):
        if b.resolution >= a.resolution:
            raise ConfigError("specs must be ordered low to high resolution")
        ratio = a.resolution / b.resolution
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(
                f"resolution {b.resolution} does not nest into {a.resolution}"
            )
        for ax in ("x", "y"):
            if abs(getattr(a.origin, ax) - getattr(b.origin, ax)) > 1e-9:
                raise ConfigError("grid specs must share one origin")
        if (abs(a.width * a.resolution - b.width * b.resolution) > 1e-6
                or abs(a.height * a.resolution - b.height * b.resolution) > 1e-6):
            raise ConfigError("grid specs must cover the same extent")


def fill_multires(cloud: PointCloud, specs: Sequence[GridSpec],
                  default_elevation: float = 0.0) -> GridStats:
    """Rasterize at three nested resolutions and fill fine holes from coarser maps.

    Empty fine cells inherit (mu, delta, eps) from the enclosing mid-resolution
    cell, then from the enclosing low-resolution cell, and finally fall back to
    default_elevation with zero spread, so the result has no empty cells.
    """
    _check_nested(specs)
    low, mid, fine = (rasterize(cloud, s) for s in specs)

    def upsample(arr, factor):
        return np.repeat(np.repeat(arr, factor, axis=0), factor, axis=1)

    f_mid = round(specs[1].resolution / specs[2].resolution)
    f_low = round(specs[0].resolution / specs[2].resolution)
    mu = fine.mu.copy()
    delta = fine.delta.copy()
    eps = fine.eps.copy()
    source_filled = fine.filled
    for coarse, factor in ((mid, f_mid), (low, f_low)):
        c_mu = upsample(coarse.mu, factor)
        c_delta = upsample(coarse.delta, factor)
        c_eps = upsample(coarse.eps, factor)
        c_filled = upsample(coarse.filled, factor)
        take = ~source_filled & c_filled
        mu[take] = c_mu[take]
        delta[take] = c_delta[take]
        eps[take] = c_eps[take]
        source_filled = source_filled | c_filled
    hole = ~source_filled
    mu[hole] = default_elevation
    delta[hole] = 0.0
    eps[hole] = 0.0
    return GridStats(
        specs[2], fine.n, mu, delta, eps,
        np.ones_like(fine.filled), fine.dropped_points,
    )


def obstacle_map(stats: GridStats, eps_threshold: float) -> np.ndarray:
    """Binary layer: 1 where the per-cell max z difference strictly exceeds the threshold."""
    return (stats.eps > eps_threshold).astype(np.uint8)


def guide_point(global_ref: Trajectory, spec: GridSpec) -> Pose2D:
    """First intersection of the reference polyline with the map boundary rectangle.

    Walked from the start of the reference forward. If the reference ends
    inside the map, its final pose is returned instead.
    """
    if len(global_ref) == 0:
        raise DataError("empty reference trajectory")
    x_min, x_max, y_min, y_max = spec.extent
    xs, ys = global_ref.x, global_ref.y

    def inside(px, py):
        return x_min <= px <= x_max and y_min <= py <= y_max

    for i in range(len(global_ref) - 1):
        x0, y0, x1, y1 = xs[i], ys[i], xs[i + 1], ys[i + 1]
        dx, dy = x1 - x0, y1 - y0
        hits = []
        for bound, p0, d, other0, otherd, lo, hi in (
            (x_min, x0, dx, y0, dy, y_min, y_max),
            (x_max, x0, dx, y0, dy, y_min, y_max),
            (y_min, y0, dy, x0, dx, x_min, x_max),
            (y_max, y0, dy, x0, dx, x_min, x_max),
        ):
            if abs(d) < 1e-15:
                continue
            t = (bound - p0) / d
            if 0.0 <= t <= 1.0 and lo - 1e-12 <= other0 + t * otherd <= hi + 1e-12:
                hits.append(t)
        if hits:
            t = min(hits)
            hx, hy = x0 + t * dx, y0 + t * dy
            heading = math.atan2(dy, dx) if (dx or dy) else float(global_ref.heading[i])
            return Pose2D(float(hx), float(hy), heading)
    if inside(xs[-1], ys[-1]):
        return Pose2D(float(xs[-1]), float(ys[-1]), float(global_ref.heading[-1]))
    raise InfeasibleError("reference trajectory never crosses the map extent")


def attractive_potential(dist: np.ndarray, params: PotentialParams) -> np.ndarray:
    """Quadratic inside attract_radius, linear with matched value and slope beyond."""
    th, ds = params.attract_gain, params.attract_radius
    quad = 0.5 * th * dist ** 2
    lin = th * ds * dist - 0.5 * th * ds ** 2
    return np.where(dist <= ds, quad, lin)


def repulsion_kernel(params: PotentialParams, resolution: float) -> np.ndarray:
    """Repulsion contribution of one obstacle cell on its neighborhood.

    Center-to-center distances, floored at half a cell to avoid the 1/D
    singularity, zero beyond the influence radius.
    """
    reach = int(math.ceil(params.repel_radius / resolution))
    offs = np.arange(-reach, reach + 1) * resolution
    dx, dy = np.meshgrid(offs, offs)
    d = np.maximum(np.hypot(dx, dy), resolution / 2.0)
    kern = 0.5 * params.repel_gain * (1.0 / d - 1.0 / params.repel_radius) ** 2
    kern[d > params.repel_radius] = 0.0
    return kern


def potential_field(obstacles: np.ndarray, goal: Pose2D, params: PotentialParams,
                    spec: GridSpec) -> np.ndarray:
    """Attraction toward the goal plus repulsion summed over obstacle cells.

    The repulsion sum over obstacles is an exact convolution of the binary
    obstacle layer with the single-obstacle kernel, evaluated with FFTs.
    """
    X, Y = spec.cell_centers()
    u = attractive_potential(np.hypot(X - goal.x, Y - goal.y), params)
    if np.any(obstacles):
        kern = repulsion_kernel(params, spec.resolution)
        kh, kw = kern.shape
        h, w = obstacles.shape
        fh, fw = h + kh - 1, w + kw - 1
        f_obs = np.fft.rfft2(obstacles.astype(float), (fh, fw))
        f_kern = np.fft.rfft2(kern, (fh, fw))
        conv = np.fft.irfft2(f_obs * f_kern, (fh, fw))
        half = kh // 2
        rep = conv[half:half + h, half:half + w]
        u = u + np.maximum(rep, 0.0)
    return u


def momentum_map(velocity: Tuple[float, float], params: MomentumParams,
                 spec: GridSpec) -> np.ndarray:
    """Directional momentum layer, clamped below at zero.

    Peaks ahead of the vehicle, vanishes perpendicular to motion and on the
    circle at distance |v|; a stationary vehicle yields an all-zero layer.
    """
    vx, vy = velocity
    vnorm = math.hypot(vx, vy)
    h, w = spec.height, spec.width
    if vnorm == 0.0:
        return np.zeros((h, w))
    X, Y = spec.cell_centers()
    r = np.hypot(X, Y)
    dot = X * vx + Y * vy
    with np.errstate(divide="ignore", invalid="ignore"):
        m = params.gain * dot * (1.0 / r - 1.0 / vnorm)
    m[r == 0.0] = 0.0
    return np.maximum(m, 0.0)


@dataclass
class MapParams:
    """Everything build_stack needs besides the sensor inputs."""

    specs: List[GridSpec]
    default_elevation: float = 0.0
    eps_threshold: float = 1.5
    potential: PotentialParams = field(default_factory=PotentialParams)
    momentum: MomentumParams = field(default_factory=MomentumParams)

    @classmethod
    def square(cls, extent: float = 100.0,
               resolutions: Tuple[float, float, float] = (4.0, 1.0, 0.25),
               **kwargs) -> "MapParams":
        """Nested square grids centered on the vehicle."""
        half = extent / 2.0
        origin = Pose2D(-half, -half, math.pi / 2)
        specs = [
            GridSpec(origin, res, int(round(extent / res)), int(round(extent / res)))
            for res in resolutions
        ]
        return cls(specs=specs, **kwargs)


def build_stack(cloud: PointCloud, state: VehicleState, global_ref: Trajectory,
                params: MapParams) -> FeatureMapStack:
    """Build the five co-registered layers for one frame (all in the vehicle frame)."""
    stats = fill_multires(cloud, params.specs, params.default_elevation)
    spec = params.specs[2]
    obstacles = obstacle_map(stats, params.eps_threshold)
    goal = guide_point(global_ref, spec)
    potential = potential_field(obstacles, goal, params.potential, spec)
    momentum = momentum_map(state.velocity, params.momentum, spec)
    return FeatureMapStack(
        spec=spec,
        elevation=stats.mu,
        roughness=stats.delta,
        obstacle=obstacles,
        potential=potential,
        momentum=momentum,
        guide_point=goal,
    )


def sample_layer(layer: np.ndarray, spec: GridSpec, x, y, what: str = "point") -> np.ndarray:
    """Layer values at the cells containing (x, y); raises DataError off-map."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    inb = spec.contains(x, y)
    if not np.all(inb):
        bad = int(np.nonzero(~inb)[0][0])
        raise DataError(f"{what} {bad} at ({x[bad]:.3f}, {y[bad]:.3f}) is outside the map")
    row, col = spec.cell_of(x, y)
    return layer[row, col]


def write_layer_csv(path, layer: np.ndarray) -> None:
    """Row-major CSV, one line per grid row."""
    lines = [",".join(format(v, ".17g") for v in row) for row in layer]
    Path(path).write_text("\n".join(lines) + "\n")


def read_layer_csv(path) -> np.ndarray:
    rows = [
        [float(v) for v in line.split(",")]
        for line in Path(path).read_text().strip().splitlines()
    ]
    return np.array(rows, dtype=float)


def write_layer_pgm(path, layer: np.ndarray) -> None:
    """16-bit ASCII PGM, min-max scaled; the scale goes to a sidecar text file."""
    vmin = float(np.min(layer))
    vmax = float(np.max(layer))
    span = vmax - vmin
    if span > 0:
        scaled = np.round((layer - vmin) / span * 65535).astype(int)
    else:
        scaled = np.zeros_like(layer, dtype=int)
    h, w = layer.shape
    lines = [f"P2", f"{w} {h}", "65535"]
    lines += [" ".join(str(v) for v in row) for row in scaled]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    sidecar = path.with_suffix(path.suffix + ".scale.txt")
    sidecar.write_text(
        "pixel = round((value - min) / (max - min) * 65535)\n"
        f"min {vmin:.17g}\nmax {vmax:.17g}\n"
    )


def read_layer_pgm(path):
    """Read back a 16-bit ASCII PGM and its sidecar; returns values in layer units."""
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise DataError(f"{path}: not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:4 + w * h]], dtype=float).reshape(h, w)
    sidecar = Path(str(path) + ".scale.txt")
    vmin = vmax = 0.0
    for line in sidecar.read_text().splitlines():
        if line.startswith("min "):
            vmin = float(line.split()[1])
        elif line.startswith("max "):
            vmax = float(line.split()[1])
    return data / maxval * (vmax - vmin) + vmin
