"""Static BEV result plots: point scatter, GT in red, predictions in blue/green."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from bevground.geometry import bev_corners

PRED_COLORS = ("tab:blue", "tab:green")


def _draw_box(ax, box, color, label=None):
    corners = bev_corners(box)
    xs = list(corners[:, 0]) + [corners[0, 0]]
    ys = list(corners[:, 1]) + [corners[0, 1]]
    ax.plot(xs, ys, color=color, linewidth=1.5, label=label)


def plot_scene(points, gt_box, predictions, out_path, title=None, extent=54.0):
    """Write one scene plot: points, the GT box (red), predicted boxes.

    ``predictions`` is a list of (name, Box3D); the first two get blue and
    green, extras cycle.
    """
    fig, ax = plt.subplots(figsize=(7, 7))
    if points is not None and len(points):
        ax.scatter(points[:, 0], points[:, 1], s=0.5, c="0.6", linewidths=0)
    _draw_box(ax, gt_box, "red", label="ground truth")
    for i, (name, box) in enumerate(predictions):
        _draw_box(ax, box, PRED_COLORS[i % len(PRED_COLORS)], label=name)
    ax.set_xlim(-extent, extent)
    ax.set_ylim(-extent, extent)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title, fontsize=9)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_loss_curve(history, out_path):
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [h["step"] for h in history]
    ax.plot(steps, [h["total"] for h in history], label="total")
    ax.plot(steps, [h["heatmap"] for h in history], label="heatmap", alpha=0.7)
    ax.plot(steps, [h["cls"] for h in history], label="cls", alpha=0.7)
    ax.plot(steps, [h["reg"] for h in history], label="reg", alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
