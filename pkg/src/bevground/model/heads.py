"""Heatmap and box heads, regression target codecs, Gaussian heatmap targets."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from bevground.geometry import Box3D
from bevground.model.grids import GridSpec

# Head output layout per proposal.
# [dx, dy, z, log_l, log_w, log_h, sin_a, cos_a, confidence_logit]
REG_DIMS = 8
HEAD_DIMS = 9


class HeatmapHead(nn.Module):
    """Single-channel center heatmap; bias starts at the focal-loss prior."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, 1, 1),
        )
        nn.init.constant_(self.conv[-1].bias, -2.19)

    def forward(self, bev: torch.Tensor) -> torch.Tensor:
        return self.conv(bev)


class DetectionHead(nn.Module):
    """Per-proposal MLP: center offset, height, log dims, yaw, confidence."""

    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(inplace=True), nn.Linear(dim, HEAD_DIMS))
        nn.init.zeros_(self.net[-1].bias)
        with torch.no_grad():
            self.net[-1].bias[7] = 1.0  # cos(alpha) prior: identity rotation

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.net(feats)


def encode_box_target(box: Box3D, position, spec: GridSpec) -> np.ndarray:
    """Regression target for a box anchored at cell (iy, ix).

    Offsets are measured in cells from the cell center, so a zero prediction
    decodes to the cell-center point.
    """
    iy, ix = int(position[0]), int(position[1])
    dx = (box.x - spec.lo) / spec.cell - (ix + 0.5)
    dy = (box.y - spec.lo) / spec.cell - (iy + 0.5)
    return np.array(
        [dx, dy, box.z, math.log(box.l), math.log(box.w), math.log(box.h),
         math.sin(box.alpha), math.cos(box.alpha)],
        dtype=np.float64,
    )


def decode_boxes(head_out: torch.Tensor, positions: torch.Tensor, spec: GridSpec):
    """Decode head outputs at the given cells into boxes and confidences.

    Returns ``(boxes, conf)`` where boxes is a list of Box3D and conf a
    float array; the (sin, cos) pair needs no prior normalization because
    atan2 is scale-invariant.
    """
    out = head_out.detach().cpu().numpy().astype(np.float64)
    pos = positions.detach().cpu().numpy()
    boxes = []
    for row, (iy, ix) in zip(out, pos):
        x = (ix + 0.5 + row[0]) * spec.cell + spec.lo
        y = (iy + 0.5 + row[1]) * spec.cell + spec.lo
        boxes.append(
            Box3D(
                x, y, row[2],
                math.exp(row[3]), math.exp(row[4]), math.exp(row[5]),
                math.atan2(row[6], row[7]),
            )
        )
    conf = 1.0 / (1.0 + np.exp(-out[:, 8]))
    return boxes, conf


def gaussian_radius(height_cells: float, width_cells: float, min_overlap: float = 0.3) -> float:
    """CornerNet-style radius: largest center shift keeping IoU >= min_overlap."""
    h, w = height_cells, width_cells

    a1 = 1.0
    b1 = h + w
    c1 = w * h * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - math.sqrt(max(b1 * b1 - 4 * a1 * c1, 0.0))) / (2 * a1)

    a2 = 4.0
    b2 = 2 * (h + w)
    c2 = (1 - min_overlap) * w * h
    r2 = (b2 - math.sqrt(max(b2 * b2 - 4 * a2 * c2, 0.0))) / (2 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2 * min_overlap * (h + w)
    c3 = (min_overlap - 1) * w * h
    r3 = (b3 + math.sqrt(max(b3 * b3 - 4 * a3 * c3, 0.0))) / (2 * a3)
    return min(r1, r2, r3)


def draw_gaussian(heatmap: np.ndarray, center, radius: int) -> None:
    """Splat a peak-1 Gaussian at an integer cell, keeping the elementwise max."""
    radius = max(int(radius), 0)
    diameter = 2 * radius + 1
    sigma = diameter / 6.0
    ys, xs = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    gauss = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    gauss[gauss < np.finfo(gauss.dtype).eps * gauss.max()] = 0

    cy, cx = int(center[0]), int(center[1])
    h, w = heatmap.shape
    top, bottom = min(cy, radius), min(h - cy, radius + 1)
    left, right = min(cx, radius), min(w - cx, radius + 1)
    if top + bottom <= 0 or left + right <= 0:
        return
    patch = heatmap[cy - top : cy + bottom, cx - left : cx + right]
    np.maximum(patch, gauss[radius - top : radius + bottom, radius - left : radius + right], out=patch)


def heatmap_target(boxes, spec: GridSpec) -> np.ndarray:
    """Target heatmap with one Gaussian splat per ground-truth center."""
    n = spec.size
    target = np.zeros((n, n), dtype=np.float64)
    for box in boxes:
        ix = int(np.clip(math.floor((box.x - spec.lo) / spec.cell), 0, n - 1))
        iy = int(np.clip(math.floor((box.y - spec.lo) / spec.cell), 0, n - 1))
        radius = gaussian_radius(box.w / spec.cell, box.l / spec.cell)
        draw_gaussian(target, (iy, ix), max(int(radius), 1))
        target[iy, ix] = 1.0
    return target
