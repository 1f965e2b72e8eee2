"""Report rendering: metric/eval CSVs and the matplotlib figures beside them."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .cost_eval import CostWeights  # noqa: E402
from .map_builder import FeatureMapStack  # noqa: E402
from .planner import FrameMetrics, PlannedTrajectory  # noqa: E402

WEIGHT_LABELS = ("w_h", "w_r", "w_T", "w_s")


def write_metrics_csv(path, metrics: Sequence[FrameMetrics]) -> None:
    lines = ["frame,wall_ms,J_h,J_r,J_T,J_s,total,selected,baseline_selected,agree"]
    for m in metrics:
        b = m.breakdown
        lines.append(
            f"{m.frame},{m.wall_ms:.3f},{b.height:.9g},{b.roughness:.9g},"
            f"{b.deviation:.9g},{b.smoothness:.9g},{m.total:.9g},"
            f"{m.selected},{m.baseline_selected},{int(m.agree)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_eval_report_csv(path, rows: List[dict]) -> None:
    """Per-scenario selection statistics; counts sum to total per row."""
    lines = ["scenario,optimal,joint_optimal,non_optimal,total,pct_optimal"]
    for r in rows:
        total = r["optimal"] + r["joint_optimal"] + r["non_optimal"]
        pct = 100.0 * (r["optimal"] + r["joint_optimal"]) / total if total else 0.0
        lines.append(
            f"{r['scenario']},{r['optimal']},{r['joint_optimal']},"
            f"{r['non_optimal']},{total},{pct:.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_weight_table_csv(path, table: Dict[str, CostWeights]) -> None:
    lines = ["scenario,w_h,w_r,w_T,w_s"]
    for scenario, w in table.items():
        lines.append(
            f"{scenario},{w.height:.6f},{w.roughness:.6f},"
            f"{w.deviation:.6f},{w.smoothness:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def save_stack_figure(stack: FeatureMapStack, path) -> None:
    """All five layers plus the guide point on one page."""
    x_min, x_max, y_min, y_max = stack.spec.extent
    fig, axes = plt.subplots(2, 3, figsize=(13, 8))
    layers = stack.layers()
    for ax, (name, layer) in zip(axes.flat, layers.items()):
        im = ax.imshow(layer, origin="lower", extent=(x_min, x_max, y_min, y_max),
                       cmap="terrain" if name == "elevation" else "viridis")
        ax.plot(stack.guide_point.x, stack.guide_point.y, "r*", markersize=10)
        ax.set_title(name)
        fig.colorbar(im, ax=ax, shrink=0.8)
    axes.flat[-1].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_plan_figure(stack: FeatureMapStack, planned: PlannedTrajectory,
                     reference, path, candidates: Sequence = ()) -> None:
    """Planned trajectory over the elevation layer."""
    x_min, x_max, y_min, y_max = stack.spec.extent
    fig, ax = plt.subplots(figsize=(7, 7))
    im = ax.imshow(stack.elevation, origin="lower",
                   extent=(x_min, x_max, y_min, y_max), cmap="terrain")
    fig.colorbar(im, ax=ax, shrink=0.8, label="elevation [m]")
    for cand in candidates:
        ax.plot(cand.x, cand.y, color="0.6", lw=0.8, alpha=0.7)
    if len(reference):
        ax.plot(reference.x, reference.y, "b--", lw=1.2, label="reference")
    if len(planned.states):
        ax.plot(planned.states.x, planned.states.y, "r-", lw=2.0, label="plan")
    ax.plot(stack.guide_point.x, stack.guide_point.y, "r*", markersize=12,
            label="guide point")
    ax.legend(loc="upper right")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_session_figure(metrics: Sequence[FrameMetrics], path, title: str = "") -> None:
    """Per-frame comparison series: adaptive vs fixed-weight plan quality."""
    frames = [m.frame for m in metrics]
    fig, axes = plt.subplots(3, 1, figsize=(9, 9), sharex=True)
    axes[0].plot(frames, [m.plan_height for m in metrics], "r-", label="adaptive")
    axes[0].plot(frames, [m.baseline_plan_height for m in metrics], "k--",
                 label="fixed weights")
    axes[0].set_ylabel("mean |dz/ds|")
    axes[0].legend(loc="upper right")
    axes[1].plot(frames, [m.plan_roughness for m in metrics], "r-")
    axes[1].plot(frames, [m.baseline_plan_roughness for m in metrics], "k--")
    axes[1].set_ylabel("mean roughness")
    w = np.array([m.weights.as_array() for m in metrics])
    for i, label in enumerate(WEIGHT_LABELS):
        axes[2].plot(frames, w[:, i], label=label)
    axes[2].set_ylabel("weights")
    axes[2].set_xlabel("frame")
    axes[2].legend(loc="upper right", ncol=4)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_weight_table_figure(table: Dict[str, CostWeights], path) -> None:
    """Grouped bars of the learned weights per scenario."""
    scenarios = list(table.keys())
    mat = np.array([table[s].as_array() for s in scenarios])
    x = np.arange(len(scenarios))
    width = 0.2
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for i, label in enumerate(WEIGHT_LABELS):
        ax.bar(x + (i - 1.5) * width, mat[:, i], width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(scenarios, rotation=20)
    ax.set_ylabel("weight")
    ax.legend(ncol=4)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
