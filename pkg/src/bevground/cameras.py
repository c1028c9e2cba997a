"""Pinhole camera rig shared by corpus rendering, the image branch BEV lift,
and annotation visibility checks.

Six horizontal cameras sit at the ego origin, one per 60-degree sector.
Camera frame: optical axis along the sector heading, x right, y down.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bevground.data.schema import VIEWPOINTS, sector_center


@dataclass(frozen=True)
class PinholeCamera:
    name: str
    yaw: float      # heading azimuth, radians
    height: float   # mount height above ground origin, meters
    image_w: int
    image_h: int
    focal: float    # pixels

    @property
    def cx(self) -> float:
        return 0.5 * self.image_w

    @property
    def cy(self) -> float:
        return 0.5 * self.image_h

    def world_to_cam(self, pts: np.ndarray) -> np.ndarray:
        """Map (n, 3) world points to camera coords (x right, y down, z forward)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        rel = pts - np.array([0.0, 0.0, self.height])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        fwd = rel[:, 0] * c + rel[:, 1] * s
        right = rel[:, 0] * s - rel[:, 1] * c
        down = -rel[:, 2]
        return np.stack([right, down, fwd], axis=1)

    def project(self, pts: np.ndarray, min_depth: float = 1e-6):
        """Project (n, 3) world points; returns (uv, depth) with uv shape (n, 2).

        Points behind the camera get depth <= 0 and an unusable uv; callers
        must mask on depth > some threshold.
        """
        cam = self.world_to_cam(pts)
        depth = cam[:, 2]
        safe = np.where(np.abs(depth) < min_depth, min_depth, depth)
        u = self.focal * cam[:, 0] / safe + self.cx
        v = self.focal * cam[:, 1] / safe + self.cy
        return np.stack([u, v], axis=1), depth

    def contains(self, uv: np.ndarray) -> np.ndarray:
        return (
            (uv[:, 0] >= 0.0)
            & (uv[:, 0] <= self.image_w - 1.0)
            & (uv[:, 1] >= 0.0)
            & (uv[:, 1] <= self.image_h - 1.0)
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "yaw": self.yaw,
            "height": self.height,
            "image_w": self.image_w,
            "image_h": self.image_h,
            "focal": self.focal,
        }


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[PinholeCamera, ...]

    def __iter__(self):
        return iter(self.cameras)

    def __len__(self):
        return len(self.cameras)

    def by_name(self, name: str) -> PinholeCamera:
        for cam in self.cameras:
            if cam.name == name:
                return cam
        raise KeyError(name)

    def save(self, path) -> None:
        payload = {"cameras": [c.to_dict() for c in self.cameras]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CameraRig":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple(PinholeCamera(**c) for c in payload["cameras"]))


def make_default_rig(image_w: int = 320, image_h: int = 180, hfov_deg: float = 70.0,
                     height: float = 1.6) -> CameraRig:
    """One camera per viewpoint sector, horizontal FoV wide enough to overlap."""
    focal = 0.5 * image_w / math.tan(math.radians(0.5 * hfov_deg))
    cams = tuple(
        PinholeCamera(name=name, yaw=sector_center(name), height=height,
                      image_w=image_w, image_h=image_h, focal=focal)
        for name in VIEWPOINTS
    )
    return CameraRig(cams)


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull of (n, 2) points, counterclockwise."""
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(iterable):
        hull = []
        for p in iterable:
            while len(hull) >= 2:
                o, a = hull[-2], hull[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    hull.pop()
                else:
                    break
            hull.append(p)
        return hull

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)
