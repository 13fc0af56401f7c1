"""Figure rendering for run outputs: time-series panels per run and box
summaries across placements, written next to the delimited output."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import BoxStats, MetricRecord
from .netmodel import DISPLAY_NAMES, NODE_NAMES

NODE_INDEX = {name: i + 1 for i, name in enumerate(NODE_NAMES)}


def render_timeseries(records: Sequence[MetricRecord], path: str | Path,
                      title: str = "") -> Path:
    """Three stacked panels: control energy, ball position vs setpoint, and
    controller placement. Solver failures are circled; off-beam intervals
    shaded."""
    path = Path(path)
    t = np.array([r.t for r in records]) / 1e9
    u_sq = np.array([r.u_sq for r in records])
    pos = np.array([r.position for r in records]) * 100.0
    sp = np.array([r.setpoint for r in records]) * 100.0
    nodes = np.array([NODE_INDEX.get(r.mpc_node, 0) for r in records])
    fails = np.array([not r.solved for r in records])
    off = np.array([r.off_beam for r in records])

    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(10, 7))
    ax = axes[0]
    ax.plot(t, u_sq, lw=0.6, color="k")
    if fails.any():
        ax.plot(t[fails], u_sq[fails], "o", mfc="none", mec="tab:blue", ms=6,
                label="no solution")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_ylabel(r"$u^2$")
    ax.grid(True, ls="--", alpha=0.5)

    ax = axes[1]
    ax.plot(t, pos, color="tab:red", lw=0.8, label="position")
    ax.plot(t, sp, color="k", lw=1.8, label="set-point")
    if off.any():
        ax.fill_between(t, ax.get_ylim()[0], ax.get_ylim()[1], where=off,
                        color="red", alpha=0.25, label="off beam")
    ax.set_ylabel("position (cm)")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, ls="--", alpha=0.5)

    ax = axes[2]
    ax.step(t, nodes, where="post", color="k", lw=1.5)
    ax.set_yticks(list(NODE_INDEX.values()),
                  [DISPLAY_NAMES[n] for n in NODE_INDEX])
    ax.set_ylim(0.5, len(NODE_INDEX) + 0.5)
    ax.set_ylabel("node")
    ax.set_xlabel("time (s)")
    ax.grid(True, ls="--", alpha=0.5)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _draw_box(ax, position: float, stats: BoxStats) -> None:
    ax.bxp([{
        "med": stats.median, "q1": stats.q1, "q3": stats.q3,
        "whislo": stats.lo_whisker, "whishi": stats.hi_whisker,
        "fliers": [],
    }], positions=[position], widths=0.5, showfliers=False)


def render_box_summary(per_placement: Mapping[str, Mapping[str, BoxStats]],
                       path: str | Path, title: str = "") -> Path:
    """One panel per metric, one box per placement (measurement-summary
    layout). `per_placement` maps node name -> {metric -> BoxStats}."""
    path = Path(path)
    metrics_present = sorted({m for stats in per_placement.values() for m in stats})
    fig, axes = plt.subplots(1, len(metrics_present),
                             figsize=(3.2 * len(metrics_present), 4.2))
    if len(metrics_present) == 1:
        axes = [axes]
    names = [n for n in NODE_NAMES if n in per_placement]
    for ax, metric in zip(axes, metrics_present):
        for i, name in enumerate(names):
            stats = per_placement[name].get(metric)
            if stats is not None:
                _draw_box(ax, i + 1, stats)
        ax.set_xticks(range(1, len(names) + 1), [DISPLAY_NAMES[n] for n in names])
        ax.set_title(metric)
        ax.grid(True, ls="--", alpha=0.5)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
