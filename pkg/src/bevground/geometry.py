"""Oriented-box geometry on the ground plane and in 3D.

Everything downstream (preprocessing, evaluation, loss targets) measures
overlap through the functions in this module, so they are kept free of any
framework dependency: plain numpy in, plain floats out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Boundary tolerance for point containment tests.
CONTAINMENT_TOL = 1e-9


def normalize_angle(alpha: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (alpha + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box: center, extents, yaw about the vertical axis.

    ``l`` runs along the heading, ``w`` lateral, ``h`` vertical. ``alpha`` is
    normalized to [-pi, pi) at construction.
    """

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got l={self.l} w={self.w} h={self.h}")
        object.__setattr__(self, "alpha", normalize_angle(float(self.alpha)))
        for name in ("x", "y", "z", "l", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def bev_area(self) -> float:
        return self.l * self.w

    def translated(self, dx: float, dy: float, dz: float = 0.0) -> "Box3D":
        return Box3D(self.x + dx, self.y + dy, self.z + dz, self.l, self.w, self.h, self.alpha)

    def rotated(self, dtheta: float) -> "Box3D":
        """Rotate about the world origin in the ground plane."""
        c, s = math.cos(dtheta), math.sin(dtheta)
        return Box3D(
            c * self.x - s * self.y,
            s * self.x + c * self.y,
            self.z,
            self.l,
            self.w,
            self.h,
            self.alpha + dtheta,
        )

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.l, self.w, self.h, self.alpha]

    @classmethod
    def from_list(cls, values) -> "Box3D":
        if len(values) != 7:
            raise ValueError(f"expected 7 box values, got {len(values)}")
        return cls(*[float(v) for v in values])


@dataclass
class PointCloudFrame:
    """A single LiDAR sweep: (n, 4) float array of x, y, z, intensity."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.float32))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (n, 4), got {pts.shape}")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


def bev_corners(box: Box3D) -> np.ndarray:
    """Four planar corners of the yaw-rotated l x w footprint, counterclockwise.

    Returns an array of shape (4, 2).
    """
    hl, hw = 0.5 * box.l, 0.5 * box.w
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]], dtype=np.float64)
    c, s = math.cos(box.alpha), math.sin(box.alpha)
    rot = np.array([[c, -s], [s, c]], dtype=np.float64)
    return local @ rot.T + np.array([box.x, box.y], dtype=np.float64)


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a counterclockwise polygon; 0 for < 3 vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a convex subject against a convex CCW clip polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        input_pts = output
        output = []
        prev = input_pts[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in input_pts:
            cur_side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    t = prev_side / (prev_side - cur_side)
                    output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                output.append(cur)
            elif prev_side >= 0.0:
                t = prev_side / (prev_side - cur_side)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    inter = clip_polygon(bev_corners(a), bev_corners(b))
    area = polygon_area(inter)
    # Clipping of convex CCW polygons yields a CCW result; clamp roundoff.
    return min(max(area, 0.0), a.bev_area, b.bev_area)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated footprint intersection-over-union in [0, 1]."""
    inter = bev_intersection_area(a, b)
    union = a.bev_area + b.bev_area - inter
    if union <= 0.0 or inter <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: rotated footprint overlap times vertical interval overlap."""
    inter_area = bev_intersection_area(a, b)
    if inter_area <= 0.0:
        return 0.0
    z_lo = max(a.z - 0.5 * a.h, b.z - 0.5 * b.h)
    z_hi = min(a.z + 0.5 * a.h, b.z + 0.5 * b.h)
    overlap = max(0.0, z_hi - z_lo)
    if overlap <= 0.0:
        return 0.0
    inter_vol = inter_area * overlap
    union = a.volume + b.volume - inter_vol
    if union <= 0.0:
        return 0.0
    return min(inter_vol / union, 1.0)


def points_in_box_mask(points: np.ndarray, box: Box3D, tol: float = CONTAINMENT_TOL) -> np.ndarray:
    """Boolean mask of points inside the oriented box (boundary counts as inside)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    d = pts[:, :3] - np.array([box.x, box.y, box.z])
    c, s = math.cos(box.alpha), math.sin(box.alpha)
    # Inverse yaw rotation into the box frame.
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return (
        (np.abs(lx) <= 0.5 * box.l + tol)
        & (np.abs(ly) <= 0.5 * box.w + tol)
        & (np.abs(d[:, 2]) <= 0.5 * box.h + tol)
    )


def points_in_box(frame: PointCloudFrame, box: Box3D, tol: float = CONTAINMENT_TOL) -> int:
    """Number of frame points inside the oriented box."""
    return int(np.count_nonzero(points_in_box_mask(frame.points, box, tol)))


def in_range(box: Box3D, lo, hi) -> bool:
    """Strict componentwise range test on the box center: lo < (x, y, z) < hi."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,):
        raise ValueError("range bounds must be 3-vectors")
    if not np.all(lo < hi):
        raise ValueError("lower bound must be strictly below upper bound")
    center = np.array([box.x, box.y, box.z])
    return bool(np.all(lo < center) and np.all(center < hi))
