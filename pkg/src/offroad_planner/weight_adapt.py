"""Learn scenario-optimal cost weights from demonstrated trajectories.

The objective is a two-layer mixture-of-experts loss: per frame, the softmax
selection probabilities of the candidate totals weight each candidate's
distance to the demonstration; frames in a batch sum. Weights live on the
probability simplex via a softmax-logit reparameterization and are optimized
with limited-memory BFGS plus a backtracking (Armijo) line search, so
accepted steps never increase the objective.
"""
from __future__ import annotations

import json
import logging
import queue
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Trajectory
from .cost_eval import (
    CostBreakdown,
    CostWeights,
    DeviationParams,
    evaluate_candidates,
)
from .errors import ConfigError, DataError
from .primitive_lib import PrimitiveLibrary, TrajectoryCluster, extract_clusters
from .scenario_gen import FrameSample

logger = logging.getLogger(__name__)


def traj_distance(a: Trajectory, b: Trajectory) -> float:
    """Mean pointwise Euclidean distance between two equal-length trajectories."""
    if len(a) != len(b):
        raise DataError(f"trajectory length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise DataError("cannot measure distance of empty trajectories")
    return float(np.mean(np.hypot(a.x - b.x, a.y - b.y)))


@dataclass
class AdaptFrame:
    """Cost breakdowns and demonstration distances for one frame's candidates."""

    breakdowns: List[CostBreakdown]
    distances: np.ndarray

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=float)
        if len(self.breakdowns) != self.distances.shape[0]:
            raise DataError("breakdowns and distances must have equal length")
        if np.any(self.distances < 0):
            raise DataError("distances must be >= 0")

    def cost_matrix(self) -> np.ndarray:
        return np.array([b.as_array() for b in self.breakdowns])


@dataclass
class AdaptConfig:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    memory: int = 10
    init: CostWeights = field(default_factory=CostWeights.uniform)
    # extra deterministic starts biased toward each cost component; the softmax
    # reparameterization has vanishing gradients near simplex vertices, so a
    # single start can stall on the wrong component
    restarts: int = 4

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1:
            raise ConfigError("max_iterations and memory must be >= 1")
        if self.gradient_tolerance <= 0:
            raise ConfigError("gradient_tolerance must be > 0")
        if self.restarts < 0 or self.restarts > 4:
            raise ConfigError("restarts must be in [0, 4]")


@dataclass
class AdaptResult:
    weights: CostWeights
    objective: float
    iterations: int
    converged: bool


def _softmax(lam: np.ndarray) -> np.ndarray:
    z = np.exp(lam - lam.max())
    return z / z.sum()


def _frame_terms(cost_matrix: np.ndarray, distances: np.ndarray, w: np.ndarray):
    """(loss, gradient wrt w) for one frame."""
    totals = cost_matrix @ w
    p = np.exp(-(totals - totals.min()))
    p /= p.sum()
    loss = float(p @ distances)
    mean_j = p @ cost_matrix  # expected cost components
    mean_dj = (p * distances) @ cost_matrix
    grad = mean_j * loss - mean_dj
    return loss, grad


def me_loss(frame: AdaptFrame, w: CostWeights) -> float:
    """Expected demonstration distance under softmax selection."""
    loss, _ = _frame_terms(frame.cost_matrix(), frame.distances, w.as_array())
    return loss


def batch_objective(frames: Sequence[AdaptFrame], w: CostWeights) -> float:
    """Sum of the per-frame losses."""
    if len(frames) == 0:
        raise DataError("empty frame batch")
    arr = w.as_array()
    return float(sum(
        _frame_terms(f.cost_matrix(), f.distances, arr)[0] for f in frames
    ))


def objective_gradient(frames: Sequence[AdaptFrame], w: CostWeights) -> np.ndarray:
    """Analytic gradient of the batch objective with respect to the weights.

    Per frame and component c this is E[J_c] * E[d] - E[d * J_c) under the
    selection probabilities (the softmax pushes probability away from
    candidates whose component cost rises).
    """
    if len(frames) == 0:
        raise DataError("empty frame batch")
    arr = w.as_array()
    grad = np.zeros(4)
    for f in frames:
        grad += _frame_terms(f.cost_matrix(), f.distances, arr)[1]
    return grad


def _batch_value_grad(mats, dists, w: np.ndarray):
    obj = 0.0
    grad = np.zeros(4)
    for mat, d in zip(mats, dists):
        loss, g = _frame_terms(mat, d, w)
        obj += loss
        grad += g
    return obj, grad


def _lbfgs_solve(value_grad, lam0: np.ndarray, config: AdaptConfig):
    """Two-loop L-BFGS with Armijo backtracking; returns (lam, f, iters, converged)."""
    lam = lam0.copy()
    f_val, g = value_grad(lam)
    s_hist: deque = deque(maxlen=config.memory)
    y_hist: deque = deque(maxlen=config.memory)
    iterations = 0
    converged = bool(np.linalg.norm(g) < config.gradient_tolerance)

    while not converged and iterations < config.max_iterations:
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            alphas.append((a, rho, s, y))
            q -= a * y
        if y_hist:
            y_last, s_last = y_hist[-1], s_hist[-1]
            q *= float(s_last @ y_last) / float(y_last @ y_last)
        for a, rho, s, y in reversed(alphas):
            b = rho * float(y @ q)
            q += (a - b) * s
        direction = -q
        slope = float(g @ direction)
        if slope >= 0:
            direction = -g
            slope = -float(g @ g)

        step = 1.0
        accepted = False
        while step >= 1e-12:
            lam_try = lam + step * direction
            f_try, g_try = value_grad(lam_try)
            if f_try <= f_val + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s_vec = lam_try - lam
        y_vec = g_try - g
        if float(s_vec @ y_vec) > 1e-12:
            s_hist.append(s_vec)
            y_hist.append(y_vec)
        lam, f_val, g = lam_try, f_try, g_try
        iterations += 1
        converged = bool(np.linalg.norm(g) < config.gradient_tolerance)
    return lam, f_val, iterations, converged


def optimize_weights(frames: Sequence[AdaptFrame],
                     config: Optional[AdaptConfig] = None) -> AdaptResult:
    """Minimize the batch objective over the weight simplex.

    Weights are reparameterized as softmax(logits); the logits are optimized
    with limited-memory BFGS (two-loop recursion) and Armijo backtracking, so
    accepted steps never increase the objective. Stops when the logit-gradient
    norm falls below the tolerance or at the iteration cap. A constant
    objective (for example, single-member frames only) returns the initial
    weights as converged. config.restarts adds component-biased starts and
    keeps the best final objective.
    """
    config = config or AdaptConfig()
    if len(frames) == 0:
        raise DataError("empty frame batch")
    mats = [f.cost_matrix() for f in frames]
    dists = [f.distances for f in frames]
    for i, (mat, d) in enumerate(zip(mats, dists)):
        if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(d))):
            raise DataError(f"non-finite costs or distances in frame {i}")
    if not any(mat.shape[0] >= 2 for mat in mats):
        logger.info("all frames have a single candidate; objective is constant")

    def value_grad(l):
        w = _softmax(l)
        obj, grad_w = _batch_value_grad(mats, dists, w)
        if not np.isfinite(obj):
            for i, (mat, d) in enumerate(zip(mats, dists)):
                if not np.isfinite(_frame_terms(mat, d, w)[0]):
                    raise DataError(f"non-finite objective contribution from frame {i}")
            raise DataError("non-finite objective")
        grad_l = w * (grad_w - float(w @ grad_w))
        return obj, grad_l

    starts = [np.maximum(config.init.as_array(), 1e-12)]
    for c in range(config.restarts):
        biased = np.full(4, 0.08)
        biased[c] = 0.76
        starts.append(biased)

    best = None
    for w0 in starts:
        lam0 = np.log(w0)
        lam0 -= lam0.mean()
        lam, f_val, iterations, converged = _lbfgs_solve(value_grad, lam0, config)
        if best is None or f_val < best[1] - 1e-12:
            best = (lam, f_val, iterations, converged)

    lam, f_val, iterations, converged = best
    w = _softmax(lam)
    return AdaptResult(
        weights=CostWeights(*w),
        objective=f_val,
        iterations=iterations,
        converged=converged,
    )


# ----- frame preparation ------------------------------------------------------


def prepare_frame(sample: FrameSample, library: PrimitiveLibrary,
                  horizon: int = 60, m: int = 16,
                  dev_params: Optional[DeviationParams] = None,
                  normalize: bool = True) -> Tuple[AdaptFrame, TrajectoryCluster]:
    """Extract the candidate cluster and score it against the demonstration.

    Costs are cluster-mean normalized by default so the four components enter
    the softmax on comparable scales (the same convention the demonstration
    oracle and the session planner use).
    """
    cluster = extract_clusters(library, sample.state, horizon=horizon, m=m)
    breakdowns = evaluate_candidates(cluster.members, sample.stack,
                                     sample.reference, dev_params,
                                     normalize=normalize)
    dists = np.array([
        traj_distance(member, sample.human_traj) for member in cluster.members
    ])
    return AdaptFrame(breakdowns, dists), cluster


class WeightAdapter:
    """Sliding window of frames with warm-started solves."""

    def __init__(self, config: Optional[AdaptConfig] = None, window: int = 10):
        if window < 1:
            raise ConfigError("window must be >= 1")
        self.config = config or AdaptConfig()
        self.frames: deque = deque(maxlen=window)
        self.last_result: Optional[AdaptResult] = None

    def push(self, frame: AdaptFrame) -> None:
        self.frames.append(frame)

    def solve(self) -> AdaptResult:
        cfg = self.config
        if self.last_result is not None:
            cfg = AdaptConfig(
                max_iterations=cfg.max_iterations,
                gradient_tolerance=cfg.gradient_tolerance,
                memory=cfg.memory,
                init=self.last_result.weights,
            )
        result = optimize_weights(list(self.frames), cfg)
        self.last_result = result
        return result


class WeightWorker:
    """Publishes the latest weight solve beside a running planner.

    deterministic=True runs solves synchronously at step() (reproducible
    sessions); deterministic=False runs them on a separate thread consuming a
    bounded queue, dropping frames when the queue is full so the producer
    never blocks. latest() never blocks and always returns a complete result.
    """

    def __init__(self, adapter: WeightAdapter, deterministic: bool = True,
                 queue_size: int = 8):
        self.adapter = adapter
        self.deterministic = deterministic
        self._slot: Optional[AdaptResult] = None
        self._lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        if not deterministic:
            self._thread = threading.Thread(target=self._run, daemon=True)
            self._thread.start()

    def submit(self, frame: AdaptFrame) -> None:
        if self.deterministic:
            self.adapter.push(frame)
            return
        try:
            self._queue.put_nowait(frame)
        except queue.Full:
            logger.debug("weight worker queue full; dropping a frame")

    def step(self) -> None:
        """Deterministic mode: solve over the current window and publish."""
        if not self.deterministic:
            return
        if self.adapter.frames:
            result = self.adapter.solve()
            with self._lock:
                self._slot = result

    def latest(self) -> Optional[AdaptResult]:
        with self._lock:
            return self._slot

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                frame = self._queue.get(timeout=0.05)
            except queue.Empty:
                continue
            self.adapter.push(frame)
            result = self.adapter.solve()
            with self._lock:
                self._slot = result

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


# ----- persistence ------------------------------------------------------------


def write_weights_json(path, result: AdaptResult, frames: int) -> None:
    w = result.weights
    payload = {
        "w_h": w.height,
        "w_r": w.roughness,
        "w_T": w.deviation,
        "w_s": w.smoothness,
        "objective": result.objective,
        "frames": frames,
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_weights_json(path) -> CostWeights:
    payload = json.loads(Path(path).read_text())
    return CostWeights(payload["w_h"], payload["w_r"], payload["w_T"], payload["w_s"])
