"""PNG figures for run outputs (top-down scene, signals over time, solver timing)."""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sim import SimLog  # noqa: E402

_META = {"Software": None}


def plot_scene(log: SimLog, path_png) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6))
    for obs in log.obstacles:
        ax.add_patch(plt.Circle(obs.center[:2], obs.radius, color="0.6", alpha=0.6))
        ax.add_patch(plt.Circle(obs.center[:2], obs.radius + log.agent_radius, fill=False, ls=":", color="0.4"))
    if log.path is not None:
        wp = log.path.waypoints
        ax.plot(wp[:, 0], wp[:, 1], "r:o", ms=3, label="planned path")
    if log.records:
        X = np.array([r.x for r in log.records])
        ax.plot(X[:, 0], X[:, 1], "b-", lw=1.5, label="closed loop")
        ax.plot(X[0, 0], X[0, 1], "ks", label="start")
    if log.goal is not None:
        ax.plot(log.goal[0], log.goal[1], "g*", ms=12, label="goal")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"top view ({log.verdict})")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path_png, dpi=120, metadata=_META)
    plt.close(fig)
    return Path(path_png)


def plot_signals(log: SimLog, path_png) -> Path:
    t = log.column("t")
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    a1.plot(t, 100.0 * log.column("s"))
    a1.set_ylabel("s [%]")
    a2.plot(t, log.column("err"))
    a2.set_ylabel("error [m]")
    a2.set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path_png, dpi=120, metadata=_META)
    plt.close(fig)
    return Path(path_png)


def plot_timing(log: SimLog, path_png) -> Path:
    t = log.column("t")
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, 1e3 * log.column("solve_time"), label="MPC solve")
    ax.plot(t, 1e3 * log.column("gov_time"), label="governor")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("time [ms]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path_png, dpi=120, metadata=_META)
    plt.close(fig)
    return Path(path_png)


def plot_run(log: SimLog, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [plot_scene(log, out / "scene_top.png")]
    if log.records:
        files += [plot_signals(log, out / "signals.png"), plot_timing(log, out / "timing.png")]
    return files
