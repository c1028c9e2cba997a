"""Dataset schema and on-disk formats.

A corpus is a JSON-Lines file of grounding samples plus per-scene binary
point clouds (little-endian float32 x/y/z/intensity quadruplets, headerless)
and six schematic camera PNGs. Field names in the JSONL records match the
dataclass fields below exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bevground.geometry import Box3D

# The ten standard detection categories used for preprocessing and synthesis.
CATEGORIES = (
    "car",
    "truck",
    "bus",
    "trailer",
    "construction_vehicle",
    "pedestrian",
    "motorcycle",
    "bicycle",
    "traffic_cone",
    "barrier",
)

# Six camera sectors, 60 degrees each, ordered clockwise from straight ahead.
# Azimuth convention: x forward, y left, angle = atan2(y, x).
VIEWPOINTS = ("front", "front_right", "back_right", "back", "back_left", "front_left")

_SECTOR_CENTERS_DEG = {
    "front": 0.0,
    "front_left": 60.0,
    "back_left": 120.0,
    "back": 180.0,
    "back_right": -120.0,
    "front_right": -60.0,
}

ATTRIBUTES = ("unique", "multiple")


def sector_of(x: float, y: float) -> str:
    """Camera sector containing the azimuth of (x, y) in the ego frame."""
    deg = math.degrees(math.atan2(y, x))
    # Shift so sector boundaries land at +-30, +-90, +-150 degrees.
    idx = int(math.floor((deg + 30.0) / 60.0)) % 6
    return ("front", "front_left", "back_left", "back", "back_right", "front_right")[idx]


def sector_center(name: str) -> float:
    """Center azimuth of a sector, radians."""
    return math.radians(_SECTOR_CENTERS_DEG[name])


@dataclass
class GroundingSample:
    """One (prompt, point cloud, images, referred box) record."""

    sample_id: str
    scene_id: str
    prompt: str
    lidar_ref: str
    image_refs: list[str]
    referred: Box3D
    category: str
    attribute: str
    viewpoint: str
    scene_boxes: list[tuple[Box3D, str]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.image_refs) != 6:
            raise ValueError(f"expected 6 image refs, got {len(self.image_refs)}")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.attribute not in ATTRIBUTES:
            raise ValueError(f"unknown attribute {self.attribute!r}")
        if self.viewpoint not in VIEWPOINTS:
            raise ValueError(f"unknown viewpoint {self.viewpoint!r}")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "scene_id": self.scene_id,
            "prompt": self.prompt,
            "lidar_ref": self.lidar_ref,
            "image_refs": list(self.image_refs),
            "referred": self.referred.to_list(),
            "category": self.category,
            "attribute": self.attribute,
            "viewpoint": self.viewpoint,
            "scene_boxes": [{"box": b.to_list(), "category": c} for b, c in self.scene_boxes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundingSample":
        return cls(
            sample_id=d["sample_id"],
            scene_id=d["scene_id"],
            prompt=d["prompt"],
            lidar_ref=d["lidar_ref"],
            image_refs=list(d["image_refs"]),
            referred=Box3D.from_list(d["referred"]),
            category=d["category"],
            attribute=d["attribute"],
            viewpoint=d["viewpoint"],
            scene_boxes=[(Box3D.from_list(e["box"]), e["category"]) for e in d["scene_boxes"]],
        )


@dataclass
class SplitManifest:
    """Train/test sample-id split with attribute tallies."""

    train: list[str]
    test: list[str]
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValueError(f"train/test overlap: {sorted(overlap)[:5]}")

    def to_dict(self) -> dict:
        return {"train": list(self.train), "test": list(self.test), "counts": dict(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        return cls(train=list(d["train"]), test=list(d["test"]), counts=dict(d.get("counts", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SplitManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_samples(path, samples) -> None:
    """Write grounding samples as UTF-8 JSON-Lines, one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def read_samples(path) -> list[GroundingSample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(GroundingSample.from_dict(json.loads(line)))
    return out


def save_points(path, points: np.ndarray) -> None:
    """Write a headerless little-endian float32 (n, 4) point file."""
    arr = np.asarray(points, dtype="<f4")
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"points must have shape (n, 4), got {arr.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    arr.tofile(path)


def load_points(path, record_floats: int = 4) -> np.ndarray:
    """Load a headerless float32 point file.

    ``record_floats=5`` accepts nuScenes-style records and drops the fifth
    field, returning (n, 4) either way.
    """
    if record_floats not in (4, 5):
        raise ValueError("record_floats must be 4 or 5")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % record_floats != 0:
        raise ValueError(f"{path}: size {raw.size} not divisible by {record_floats}")
    pts = raw.reshape(-1, record_floats)
    return np.ascontiguousarray(pts[:, :4])
