"""Corpus preprocessing: category mapping, range and point-count filters.

Raw annotation records are dicts carrying at least a category, a referred
box, the frame's full box list, and either a precomputed point count or a
point-cloud reference. Records that fail any filter are rejected with a
per-record diagnostic; a malformed record never aborts the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bevground.geometry import Box3D, PointCloudFrame, in_range, points_in_box
from bevground.data.schema import CATEGORIES, GroundingSample, load_points, sector_of

DEFAULT_RANGE_LO = (-54.0, -54.0, -5.0)
DEFAULT_RANGE_HI = (54.0, 54.0, 3.0)
DEFAULT_MIN_POINTS = 1

# Raw nuScenes-style names mapped onto the ten standard detection categories.
CATEGORY_MAP = {name: name for name in CATEGORIES}
CATEGORY_MAP.update(
    {
        "vehicle.car": "car",
        "vehicle.truck": "truck",
        "vehicle.bus.rigid": "bus",
        "vehicle.bus.bendy": "bus",
        "vehicle.trailer": "trailer",
        "vehicle.construction": "construction_vehicle",
        "human.pedestrian.adult": "pedestrian",
        "human.pedestrian.child": "pedestrian",
        "human.pedestrian.police_officer": "pedestrian",
        "human.pedestrian.construction_worker": "pedestrian",
        "vehicle.motorcycle": "motorcycle",
        "vehicle.bicycle": "bicycle",
        "movable_object.trafficcone": "traffic_cone",
        "movable_object.barrier": "barrier",
    }
)


class IntegrityError(ValueError):
    """Referred box missing from the frame's box list."""


@dataclass
class Rejection:
    sample_id: str
    reason: str


def map_category(raw: str) -> str | None:
    return CATEGORY_MAP.get(raw)


def label_attribute(referred: Box3D, category: str, scene_boxes) -> str:
    """``unique`` iff no other frame box shares the referred category.

    Depends only on the category multiset: the referred box itself is
    matched (and excluded) by geometry, every remaining box only by name.
    """
    if not scene_boxes:
        raise IntegrityError("scene_boxes is empty")
    matched_self = False
    others_same = 0
    for box, cat in scene_boxes:
        if not matched_self and cat == category and _same_box(box, referred):
            matched_self = True
            continue
        if cat == category:
            others_same += 1
    if not matched_self:
        raise IntegrityError("referred box not present in scene_boxes")
    return "unique" if others_same == 0 else "multiple"


def _same_box(a: Box3D, b: Box3D, tol: float = 1e-6) -> bool:
    return all(abs(p - q) <= tol for p, q in zip(a.to_list(), b.to_list()))


def preprocess(
    raw_records,
    range_lo=DEFAULT_RANGE_LO,
    range_hi=DEFAULT_RANGE_HI,
    min_points: int = DEFAULT_MIN_POINTS,
    points_root=None,
):
    """Filter raw annotation records into grounding samples.

    A record survives iff its raw category maps onto a standard one, its box
    center lies strictly inside (range_lo, range_hi), and its box contains at
    least ``min_points`` LiDAR points. Point counts come from the record's
    ``num_points`` when present, otherwise from the referenced point cloud.

    Returns ``(samples, rejections)``.
    """
    samples: list[GroundingSample] = []
    rejections: list[Rejection] = []
    point_cache: dict[str, np.ndarray] = {}

    for idx, rec in enumerate(raw_records):
        rid = str(rec.get("sample_id", f"record-{idx}")) if isinstance(rec, dict) else f"record-{idx}"
        try:
            sample = _convert_record(rec, range_lo, range_hi, min_points, points_root, point_cache)
        except _Reject as r:
            rejections.append(Rejection(rid, str(r)))
            continue
        except Exception as exc:  # malformed record: diagnose, keep going
            rejections.append(Rejection(rid, f"malformed record: {exc}"))
            continue
        samples.append(sample)
    return samples, rejections


class _Reject(Exception):
    pass


def _convert_record(rec, range_lo, range_hi, min_points, points_root, point_cache) -> GroundingSample:
    if isinstance(rec, GroundingSample):
        rec = rec.to_dict()
    category = map_category(rec["category"])
    if category is None:
        raise _Reject(f"unmapped category {rec['category']!r}")

    referred = Box3D.from_list(rec["referred"])
    if not in_range(referred, range_lo, range_hi):
        raise _Reject(
            f"center ({referred.x:.2f}, {referred.y:.2f}, {referred.z:.2f}) outside strict range"
        )

    count = rec.get("num_points")
    if count is None:
        count = _count_points(rec["lidar_ref"], referred, points_root, point_cache)
    if int(count) < min_points:
        raise _Reject(f"box contains {int(count)} points, need >= {min_points}")

    scene_boxes = [(Box3D.from_list(e["box"]), e["category"]) for e in rec["scene_boxes"]]
    scene_boxes = [(b, map_category(c) or c) for b, c in scene_boxes]
    attribute = label_attribute(referred, category, scene_boxes)

    return GroundingSample(
        sample_id=rec["sample_id"],
        scene_id=rec["scene_id"],
        prompt=rec["prompt"],
        lidar_ref=rec["lidar_ref"],
        image_refs=list(rec["image_refs"]),
        referred=referred,
        category=category,
        attribute=attribute,
        viewpoint=rec.get("viewpoint") or sector_of(referred.x, referred.y),
        scene_boxes=scene_boxes,
    )


def _count_points(lidar_ref, box, points_root, point_cache) -> int:
    key = str(lidar_ref)
    if key not in point_cache:
        path = key if points_root is None else str(points_root) + "/" + key
        point_cache[key] = load_points(path)
    return points_in_box(PointCloudFrame(point_cache[key]), box)
