"""Unimodal encoders: voxelized point-cloud branch and camera-to-BEV lift."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from bevground.model.grids import GridSpec

# Per-voxel features ahead of the conv stack: mean offsets to the voxel
# center (x, y, z, in cell units), mean intensity, binary occupancy.
VOXEL_FEATURES = 5


def voxelize(points: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Scatter points into (VOXEL_FEATURES * z_bins, H, W) mean/occupancy maps.

    Offsets are stored relative to each voxel's center so the result is
    exactly shift-equivariant under whole-cell translations. Points outside
    the grid or the vertical window are dropped. Empty input gives zeros.
    """
    n = spec.size
    out = np.zeros((VOXEL_FEATURES * spec.z_bins, n, n), dtype=np.float32)
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return out

    ix = np.floor((pts[:, 0] - spec.lo) / spec.cell).astype(np.int64)
    iy = np.floor((pts[:, 1] - spec.lo) / spec.cell).astype(np.int64)
    iz = np.floor((pts[:, 2] - spec.z_lo) / spec.z_step).astype(np.int64)
    keep = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n) & (iz >= 0) & (iz < spec.z_bins)
    if not np.any(keep):
        return out
    pts, ix, iy, iz = pts[keep], ix[keep], iy[keep], iz[keep]

    cx = spec.lo + (ix + 0.5) * spec.cell
    cy = spec.lo + (iy + 0.5) * spec.cell
    cz = spec.z_lo + (iz + 0.5) * spec.z_step
    feats = np.stack(
        [
            (pts[:, 0] - cx) / spec.cell,
            (pts[:, 1] - cy) / spec.cell,
            (pts[:, 2] - cz) / spec.z_step,
            pts[:, 3],
        ],
        axis=1,
    )

    flat = (iz * n + iy) * n + ix
    counts = np.zeros(spec.z_bins * n * n, dtype=np.float64)
    np.add.at(counts, flat, 1.0)
    sums = np.zeros((spec.z_bins * n * n, 4), dtype=np.float64)
    np.add.at(sums, flat, feats)

    occupied = counts > 0
    means = np.zeros_like(sums)
    means[occupied] = sums[occupied] / counts[occupied, None]

    means = means.reshape(spec.z_bins, n, n, 4)
    occ = occupied.reshape(spec.z_bins, n, n).astype(np.float32)
    for b in range(spec.z_bins):
        out[VOXEL_FEATURES * b : VOXEL_FEATURES * b + 4] = means[b].transpose(2, 0, 1).astype(np.float32)
        out[VOXEL_FEATURES * b + 4] = occ[b]
    return out


def occupancy_channels(spec: GridSpec):
    """Channel indices of the binary occupancy planes in voxelize output."""
    return [VOXEL_FEATURES * b + 4 for b in range(spec.z_bins)]


def _norm(channels: int) -> nn.Module:
    groups = math.gcd(8, channels)
    return nn.GroupNorm(groups, channels)


class PointGridEncoder(nn.Module):
    """Voxel feature maps through a small conv stack to the BEV width."""

    def __init__(self, spec: GridSpec, channels: int):
        super().__init__()
        self.spec = spec
        c_in = VOXEL_FEATURES * spec.z_bins
        self.net = nn.Sequential(
            nn.Conv2d(c_in, channels, 3, padding=1),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, voxels: torch.Tensor) -> torch.Tensor:
        """(B, F*z_bins, H, W) -> (B, C, H, W)."""
        return self.net(voxels)

    def encode_points(self, points: np.ndarray) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        n = self.spec.size
        pts = np.asarray(points)
        if pts.size == 0:
            # No returns at all: no evidence, an exactly zero grid (bias
            # responses to a phantom sweep would be misleading downstream).
            out_c = self.net[-1].out_channels
            return torch.zeros(1, out_c, n, n, dtype=dtype)
        vox = torch.from_numpy(voxelize(pts, self.spec)).unsqueeze(0).to(dtype)
        return self.forward(vox)


class ImageBEVLift(nn.Module):
    """Per-view CNN features splatted onto the BEV grid along ground-plane rays.

    Every BEV cell center (at a fixed reference height) is projected into
    each camera; visible cells bilinearly sample that view's feature map and
    visible views are averaged. Cells no camera sees stay zero.
    """

    def __init__(self, spec: GridSpec, rig, channels: int, sample_height: float = -0.8):
        super().__init__()
        self.spec = spec
        self.rig = rig
        self.sample_height = sample_height
        mid = max(channels // 2, 4)
        self.view_encoder = nn.Sequential(
            nn.Conv2d(3, mid, 5, stride=2, padding=2),
            _norm(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, channels, 3, stride=2, padding=1),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        grids, masks = self._build_sampling()
        self.register_buffer("sample_grids", grids, persistent=False)
        self.register_buffer("valid_masks", masks, persistent=False)

    def _build_sampling(self):
        n = self.spec.size
        iy, ix = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        x, y = self.spec.cell_center(iy, ix)
        world = np.stack([x, y, np.full_like(x, self.sample_height)], axis=-1).reshape(-1, 3)
        grids, masks = [], []
        for cam in self.rig:
            uv, depth = cam.project(world)
            valid = (depth > 0.5) & cam.contains(uv)
            gx = 2.0 * uv[:, 0] / max(cam.image_w - 1, 1) - 1.0
            gy = 2.0 * uv[:, 1] / max(cam.image_h - 1, 1) - 1.0
            grid = np.stack([gx, gy], axis=-1).reshape(n, n, 2)
            grid[~valid.reshape(n, n)] = -2.0  # lands in zero padding
            grids.append(grid)
            masks.append(valid.reshape(n, n))
        return (
            torch.from_numpy(np.stack(grids)).float(),
            torch.from_numpy(np.stack(masks)).float(),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(V, 3, h, w) view rasters -> (1, C, H, W) BEV features."""
        if images.shape[0] != len(self.rig):
            raise ValueError(f"expected {len(self.rig)} views, got {images.shape[0]}")
        feats = self.view_encoder(images)  # (V, C, h', w')
        grids = self.sample_grids.to(feats.dtype)
        lifted = F.grid_sample(feats, grids, mode="bilinear", padding_mode="zeros", align_corners=True)
        masks = self.valid_masks.to(feats.dtype).unsqueeze(1)
        total = (lifted * masks).sum(dim=0, keepdim=True)
        cover = masks.sum(dim=0, keepdim=True).clamp(min=1.0)
        return total / cover
