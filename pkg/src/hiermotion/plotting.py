"""Report figures rendered straight to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import skeleton as sk  # noqa: E402


def _footprint(ax, obj, **kw):
    c = obj.cell_size
    cols = np.argwhere(obj.grid.any(axis=1))
    for i, k in cols:
        corners = np.array([[i, k], [i + 1, k], [i + 1, k + 1], [i, k + 1], [i, k]], dtype=float) * c - 4 * c
        world = obj.frame.apply(corners)
        ax.fill(world[:, 0], world[:, 1], **kw)


def plot_trajectories(path, generated, reference=(), scenes=(), title: str = "Root trajectories"):
    """Top-down root paths of generated (solid) and reference (dashed) motions."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for scene in scenes:
        for obj in scene.objects:
            _footprint(ax, obj, color="0.85", lw=0)
    for seq in reference:
        ax.plot(seq.root_pos[:, 0], seq.root_pos[:, 1], "--", color="0.5", lw=0.8)
    for i, seq in enumerate(generated):
        ax.plot(seq.root_pos[:, 0], seq.root_pos[:, 1], lw=1.2, color=plt.cm.viridis(i / max(len(generated), 1)))
        ax.plot(*seq.root_pos[0], "o", ms=4, color="k")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("z (m)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_metrics(path, rows: dict, fields=("apd_m", "apd_p", "apd_t", "penetration", "sliding")):
    """Grouped bars, one group per metric and one bar per named result row."""
    names = list(rows)
    x = np.arange(len(fields))
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i, name in enumerate(names):
        vals = [rows[name].get(f, np.nan) for f in fields]
        ax.bar(x + i * width, vals, width, label=name)
    ax.set_xticks(x + width * (len(names) - 1) / 2)
    ax.set_xticklabels(fields)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_foot_heights(path, seq):
    """Foot heights over time with grounded frames shaded."""
    w = seq.world_joints()
    t = np.arange(len(seq))
    fig, ax = plt.subplots(figsize=(7, 2.8))
    for j, name in zip(sk.FEET, ("left", "right")):
        ax.plot(t, w[:, j, 1], lw=1, label=f"{name} ankle")
    ax.axhline(0.05, color="0.6", lw=0.6, ls=":")
    ax.set_xlabel("frame")
    ax.set_ylabel("height (m)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_curve(path, curve: list, key: str = "loss", title: str = ""):
    steps = [r["step"] for r in curve]
    vals = [r[key] for r in curve]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, vals, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel(key)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
