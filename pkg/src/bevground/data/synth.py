"""Deterministic synthetic corpus generation.

Scenes are laid out by seeded rejection sampling so every emitted prompt
identifies its referent unambiguously from (viewpoint sector, category,
range relation) alone; color words are redundant decoration that only the
camera rasters can corroborate. Point clouds are face samples of the box
surfaces plus log-uniform ground clutter (density decaying with distance),
and the six camera views are schematic class-colored rasters.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

import bevground.cameras as cameras_mod
from bevground.geometry import Box3D, PointCloudFrame, bev_iou, points_in_box
from bevground.data.preprocess import label_attribute
from bevground.data.schema import (
    CATEGORIES,
    GroundingSample,
    SplitManifest,
    save_points,
    sector_of,
    write_samples,
)

log = logging.getLogger(__name__)

# Mean (l, w, h) per category, meters; sampled sizes get ~8% lognormal jitter.
SIZE_PRIORS = {
    "car": (4.6, 1.95, 1.73),
    "truck": (6.9, 2.50, 2.80),
    "bus": (11.0, 2.90, 3.50),
    "trailer": (12.3, 2.90, 3.80),
    "construction_vehicle": (6.4, 2.80, 3.20),
    "pedestrian": (0.73, 0.67, 1.77),
    "motorcycle": (2.1, 0.77, 1.46),
    "bicycle": (1.7, 0.60, 1.30),
    "traffic_cone": (0.41, 0.41, 1.07),
    "barrier": (2.5, 0.50, 0.98),
}

# Street-scene category frequencies (not uniform: cars dominate).
DEFAULT_CLASS_PRIORS = {
    "car": 0.30,
    "truck": 0.10,
    "bus": 0.05,
    "trailer": 0.04,
    "construction_vehicle": 0.05,
    "pedestrian": 0.18,
    "motorcycle": 0.07,
    "bicycle": 0.07,
    "traffic_cone": 0.08,
    "barrier": 0.06,
}

COLOR_POOLS = {
    "car": ("white", "black", "silver", "red", "blue"),
    "truck": ("white", "orange", "green"),
    "bus": ("yellow", "white", "blue"),
    "trailer": ("gray", "white"),
    "construction_vehicle": ("yellow", "orange"),
    "pedestrian": ("red", "blue", "black", "green"),
    "motorcycle": ("black", "red", "blue"),
    "bicycle": ("green", "black", "yellow"),
    "traffic_cone": ("orange",),
    "barrier": ("gray", "white"),
}

COLOR_RGB = {
    "white": (235, 235, 235),
    "black": (25, 25, 25),
    "silver": (180, 180, 190),
    "red": (200, 40, 40),
    "blue": (50, 90, 210),
    "green": (50, 160, 70),
    "yellow": (230, 200, 40),
    "orange": (235, 130, 30),
    "gray": (120, 120, 120),
    "brown": (130, 90, 50),
}

# Per-class LiDAR return intensity baseline.
INTENSITY_BASE = {
    "car": 0.55, "truck": 0.50, "bus": 0.50, "trailer": 0.45,
    "construction_vehicle": 0.50, "pedestrian": 0.35, "motorcycle": 0.45,
    "bicycle": 0.40, "traffic_cone": 0.70, "barrier": 0.60,
}

RELATIONS = ("only", "closest", "farthest")

PROMPT_TEMPLATES = (
    "The {color} {category} in the {sector}{relation_clause}.",
    "Find the {color} {category} located in the {sector}{relation_clause}.",
    "{relation_lead} {color} {category} in the {sector} area.",
)

_RELATION_CLAUSE = {
    "only": ", the only one there",
    "closest": " that is closest to you",
    "farthest": " that is farthest from you",
}
_RELATION_LEAD = {"only": "The only", "closest": "The nearest", "farthest": "The farthest"}


@dataclass
class SynthConfig:
    seed: int = 0
    n_scenes: int = 10
    objects_per_scene: tuple[int, int] = (3, 8)
    class_priors: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_PRIORS))
    prompts_per_scene: int = 3
    min_radius: float = 6.0
    max_radius: float = 48.0
    ground_z: float = -1.8
    range_margin: float = 2.0      # min range gap backing closest/farthest prompts
    surface_density: float = 700.0  # box surface points at 10 m reference range
    min_box_points: int = 8
    max_box_points: int = 400
    ground_points: int = 1500
    image_w: int = 320
    image_h: int = 180

    def __post_init__(self):
        lo, hi = self.objects_per_scene
        if not (2 <= lo <= hi <= 12):
            raise ValueError(f"objects_per_scene must lie within [2, 12], got {self.objects_per_scene}")


def object_color(scene_id: str, obj_idx: int, category: str) -> str:
    """Stable per-object color word, recomputable anywhere from identifiers."""
    pool = COLOR_POOLS[category]
    digest = hashlib.blake2b(f"{scene_id}:{obj_idx}".encode(), digest_size=4).digest()
    return pool[int.from_bytes(digest, "little") % len(pool)]


def category_phrase(category: str) -> str:
    return category.replace("_", " ")


def sector_phrase(sector: str) -> str:
    return sector.replace("_", " ")


def compose_prompt(template_idx: int, color: str, category: str, sector: str, relation: str) -> str:
    template = PROMPT_TEMPLATES[template_idx % len(PROMPT_TEMPLATES)]
    return template.format(
        color=color,
        category=category_phrase(category),
        sector=sector_phrase(sector),
        relation_clause=_RELATION_CLAUSE[relation],
        relation_lead=_RELATION_LEAD[relation],
    )


# --- template inversion -------------------------------------------------

_SECTOR_PHRASES = sorted(
    ("front", "front_right", "back_right", "back", "back_left", "front_left"),
    key=lambda s: -len(s),
)
_CATEGORY_PHRASES = sorted(CATEGORIES, key=lambda s: -len(s))


def parse_prompt(prompt: str):
    """Recover (category, sector, relation) from any built-in template."""
    text = prompt.lower()
    category = next((c for c in _CATEGORY_PHRASES if category_phrase(c) in text), None)
    sector = next((s for s in _SECTOR_PHRASES if sector_phrase(s) in text), None)
    if "nearest" in text or "closest" in text:
        relation = "closest"
    elif "farthest" in text:
        relation = "farthest"
    elif "only" in text:
        relation = "only"
    else:
        relation = None
    if category is None or sector is None or relation is None:
        raise ValueError(f"prompt does not match the synthetic templates: {prompt!r}")
    return category, sector, relation


def resolve_prompt(prompt: str, scene_boxes) -> int:
    """Rule-based referent resolution; returns the index into scene_boxes."""
    category, sector, relation = parse_prompt(prompt)
    cands = [
        (i, math.hypot(b.x, b.y))
        for i, (b, c) in enumerate(scene_boxes)
        if c == category and sector_of(b.x, b.y) == sector
    ]
    if not cands:
        raise ValueError(f"no candidate matches {prompt!r}")
    if relation == "only":
        if len(cands) != 1:
            raise ValueError(f"'only' prompt with {len(cands)} candidates: {prompt!r}")
        return cands[0][0]
    if relation == "closest":
        return min(cands, key=lambda t: (t[1], t[0]))[0]
    return max(cands, key=lambda t: (t[1], -t[0]))[0]


# --- scene layout ---------------------------------------------------------


def _sample_boxes(rng: np.random.Generator, cfg: SynthConfig):
    names = list(cfg.class_priors.keys())
    probs = np.array([cfg.class_priors[n] for n in names], dtype=np.float64)
    probs = probs / probs.sum()
    n_obj = int(rng.integers(cfg.objects_per_scene[0], cfg.objects_per_scene[1] + 1))
    boxes: list[tuple[Box3D, str]] = []
    for _ in range(n_obj):
        cat = names[int(rng.choice(len(names), p=probs))]
        base = SIZE_PRIORS[cat]
        l, w, h = (float(d * math.exp(rng.normal(0.0, 0.08))) for d in base)
        for _ in range(20):
            r = float(rng.uniform(cfg.min_radius, cfg.max_radius))
            theta = float(rng.uniform(-math.pi, math.pi))
            x, y = r * math.cos(theta), r * math.sin(theta)
            z = cfg.ground_z + 0.5 * h + float(rng.normal(0.0, 0.03))
            cand = Box3D(x, y, z, l, w, h, float(rng.uniform(-math.pi, math.pi)))
            if all(bev_iou(cand, b) < 0.02 for b, _ in boxes):
                boxes.append((cand, cat))
                break
    return boxes


def _resolvable_referents(boxes, margin: float):
    """Indices identifiable by (category, sector, relation), with relation."""
    info = [(i, c, sector_of(b.x, b.y), math.hypot(b.x, b.y)) for i, (b, c) in enumerate(boxes)]
    out = []
    for i, cat, sec, rng_i in info:
        group = sorted((r, j) for j, c, s, r in info if c == cat and s == sec)
        if len(group) == 1:
            out.append((i, "only"))
        elif group[0][1] == i and group[1][0] - group[0][0] >= margin:
            out.append((i, "closest"))
        elif group[-1][1] == i and group[-1][0] - group[-2][0] >= margin:
            out.append((i, "farthest"))
    return out


# --- point cloud synthesis -------------------------------------------------

# Faces of the unit box in its local frame: (axis, sign) pairs; bottom skipped.
_FACES = (("x", 1), ("x", -1), ("y", 1), ("y", -1), ("z", 1))


def _face_area(face, l, w, h):
    axis, _ = face
    return {"x": w * h, "y": l * h, "z": l * w}[axis]


def _sample_box_surface(rng, box: Box3D, cat: str, cfg: SynthConfig) -> np.ndarray:
    r = max(math.hypot(box.x, box.y), 1.0)
    area = box.l * box.w + box.l * box.h + box.w * box.h
    n = int(np.clip(round(cfg.surface_density * area / (r * r) * 10.0), cfg.min_box_points, cfg.max_box_points))
    areas = np.array([_face_area(f, box.l, box.w, box.h) for f in _FACES])
    face_idx = rng.choice(len(_FACES), size=n, p=areas / areas.sum())
    # Sample inside 99.5% of the half extents so containment survives roundoff.
    u = rng.uniform(-0.995, 0.995, size=n)
    v = rng.uniform(-0.995, 0.995, size=n)
    hl, hw, hh = 0.5 * box.l, 0.5 * box.w, 0.5 * box.h
    local = np.empty((n, 3))
    for k, (axis, sign) in enumerate(_FACES):
        m = face_idx == k
        if axis == "x":
            local[m, 0] = sign * hl * 0.995
            local[m, 1] = u[m] * hw
            local[m, 2] = v[m] * hh
        elif axis == "y":
            local[m, 0] = u[m] * hl
            local[m, 1] = sign * hw * 0.995
            local[m, 2] = v[m] * hh
        else:
            local[m, 0] = u[m] * hl
            local[m, 1] = v[m] * hw
            local[m, 2] = sign * hh * 0.995
    c, s = math.cos(box.alpha), math.sin(box.alpha)
    world = np.empty((n, 4))
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.x
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.y
    world[:, 2] = local[:, 2] + box.z
    world[:, 3] = np.clip(INTENSITY_BASE[cat] + rng.normal(0.0, 0.05, size=n), 0.0, 1.0)
    return world


def _sample_ground(rng, cfg: SynthConfig) -> np.ndarray:
    n = cfg.ground_points
    # Log-uniform radius: point density falls off roughly as 1/r.
    u = rng.uniform(0.0, 1.0, size=n)
    r = 2.0 * (cfg.max_radius / 2.0) ** u
    theta = rng.uniform(-math.pi, math.pi, size=n)
    pts = np.empty((n, 4))
    pts[:, 0] = r * np.cos(theta)
    pts[:, 1] = r * np.sin(theta)
    pts[:, 2] = cfg.ground_z + rng.normal(0.0, 0.03, size=n)
    pts[:, 3] = rng.uniform(0.05, 0.25, size=n)
    return pts


def synth_points(rng, boxes, cfg: SynthConfig) -> np.ndarray:
    parts = [_sample_ground(rng, cfg)]
    parts += [_sample_box_surface(rng, b, c, cfg) for b, c in boxes]
    return np.concatenate(parts, axis=0).astype(np.float32)


# --- rendering --------------------------------------------------------------


def render_views(boxes, scene_id: str, rig, out_dir: Path) -> list[str]:
    """Schematic per-camera rasters: painter-ordered class-colored box fills."""
    from bevground.geometry import bev_corners  # local import keeps module load light

    refs = []
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(enumerate(boxes), key=lambda t: -math.hypot(t[1][0].x, t[1][0].y))
    for cam in rig:
        img = Image.new("RGB", (cam.image_w, cam.image_h), (40, 40, 48))
        draw = ImageDraw.Draw(img)
        draw.rectangle([0, cam.cy, cam.image_w, cam.image_h], fill=(55, 55, 60))
        for idx, (box, cat) in ordered:
            corners2d = bev_corners(box)
            z_lo, z_hi = box.z - 0.5 * box.h, box.z + 0.5 * box.h
            corners = np.array(
                [[cx, cy, z] for cx, cy in corners2d for z in (z_lo, z_hi)]
            )
            uv, depth = cam.project(corners)
            visible = depth > 0.3
            if np.count_nonzero(visible) < 3:
                continue
            hull = cameras_mod.convex_hull_2d(uv[visible])
            if len(hull) < 3:
                continue
            rgb = COLOR_RGB[object_color(scene_id, idx, cat)]
            draw.polygon([tuple(p) for p in hull], fill=rgb,
                         outline=tuple(max(0, v - 40) for v in rgb))
        path = out_dir / f"{cam.name}.png"
        img.save(path, format="PNG")
        refs.append(str(path))
    return refs


# --- top-level corpus generation ------------------------------------------


def synth_corpus(cfg: SynthConfig, out_dir) -> list[GroundingSample]:
    """Generate a corpus under ``out_dir``; returns the emitted samples.

    Layout: ``points/<scene>.bin``, ``images/<scene>/<cam>.png``,
    ``samples.jsonl``, ``calib.json``. Same config (seed included) twice
    gives byte-identical output.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rig = cameras_mod.make_default_rig(cfg.image_w, cfg.image_h)
    rig.save(out / "calib.json")

    samples: list[GroundingSample] = []
    skipped = 0
    for i in range(cfg.n_scenes):
        rng = np.random.default_rng([cfg.seed, i])
        scene_id = f"scene-{i:05d}"
        layout = None
        for _ in range(100):
            boxes = _sample_boxes(rng, cfg)
            referents = _resolvable_referents(boxes, cfg.range_margin)
            if referents:
                layout = (boxes, referents)
                break
        if layout is None:
            skipped += 1
            log.warning("scene %s: no uniquely-identifiable referent after 100 attempts, skipping", scene_id)
            continue
        boxes, referents = layout

        points = synth_points(rng, boxes, cfg)
        lidar_ref = f"points/{scene_id}.bin"
        save_points(out / lidar_ref, points)
        image_dir = out / "images" / scene_id
        render_views(boxes, scene_id, rig, image_dir)
        image_refs = [f"images/{scene_id}/{cam.name}.png" for cam in rig]

        order = rng.permutation(len(referents))
        chosen = [referents[int(j)] for j in order[: cfg.prompts_per_scene]]
        frame = PointCloudFrame(points)
        for k, (obj_idx, relation) in enumerate(chosen):
            box, cat = boxes[obj_idx]
            assert points_in_box(frame, box) >= 1, "synthesized box lost its surface points"
            sector = sector_of(box.x, box.y)
            prompt = compose_prompt(
                int(rng.integers(0, len(PROMPT_TEMPLATES))),
                object_color(scene_id, obj_idx, cat),
                cat,
                sector,
                relation,
            )
            samples.append(
                GroundingSample(
                    sample_id=f"{scene_id}-{k:02d}",
                    scene_id=scene_id,
                    prompt=prompt,
                    lidar_ref=lidar_ref,
                    image_refs=image_refs,
                    referred=box,
                    category=cat,
                    attribute=label_attribute(box, cat, boxes),
                    viewpoint=sector,
                    scene_boxes=boxes,
                )
            )
    if skipped:
        log.warning("skipped %d scene(s) without resolvable referents", skipped)
    write_samples(out / "samples.jsonl", samples)
    return samples


def make_split(samples, train_frac: float = 0.8, seed: int = 0) -> SplitManifest:
    """Scene-level train/test split (prompts from one scene never straddle it)."""
    scenes = sorted({s.scene_id for s in samples})
    rng = np.random.default_rng([seed, len(scenes)])
    order = rng.permutation(len(scenes))
    n_train = int(round(train_frac * len(scenes)))
    train_scenes = {scenes[int(i)] for i in order[:n_train]}
    train = [s.sample_id for s in samples if s.scene_id in train_scenes]
    test = [s.sample_id for s in samples if s.scene_id not in train_scenes]
    counts = {
        "train": _attribute_counts(samples, set(train)),
        "test": _attribute_counts(samples, set(test)),
    }
    return SplitManifest(train=train, test=test, counts=counts)


def _attribute_counts(samples, ids) -> dict:
    out = {"unique": 0, "multiple": 0}
    for s in samples:
        if s.sample_id in ids:
            out[s.attribute] += 1
    return out
