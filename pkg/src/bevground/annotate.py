"""Three-step prompt annotation: frame sampling and visibility filtering,
caption generation through a vision-language client, paraphrase plus
viewpoint injection through a language client.

Clients speak a minimal JSON contract (request: {prompt, image?, meta?};
response: {text}) so any model server can adapt; the bundled mock clients
make the whole pipeline deterministic and offline-testable. Manual review
is represented by an emitted review-queue file, not an interactive tool.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from bevground.cameras import CameraRig, make_default_rig
from bevground.data.schema import GroundingSample, write_samples
from bevground.data.synth import object_color
from bevground.geometry import bev_corners

log = logging.getLogger(__name__)

# Instruction sent with every captioning request.
CAPTION_PROMPT = (
    "Attention: only need to focus on the object in the bounding box. "
    "Please use one or two sentences to describe the object in the red "
    "bounding box with greater detail, including its precise location, "
    "type, and color characteristics."
)

# Rewording instructions, cycled per sample.
PARAPHRASE_PROMPTS = (
    "Please help me paraphrase this sentence while keeping its meaning.",
    "Please help me reword a sentence with richer vocabulary but keep its meaning.",
    "Help me reword a sentence, you should describe it in a different way.",
)

# Viewpoint warning prefixes, cycled per sample.
SECTOR_PREFIXES = ("Be aware of the {sector}!", "Look out for the {sector}!")

SYNONYMS = {
    "car": "automobile",
    "truck": "lorry",
    "driving": "navigating",
    "street": "boulevard",
    "road": "thoroughfare",
    "night": "darkness",
    "woman": "lady",
    "man": "gentleman",
    "standing": "poised",
    "walking": "strolling",
    "parked": "stationed",
    "dark": "dim",
    "big": "sizable",
    "small": "compact",
}


class ClientError(RuntimeError):
    """Transport failure after exhausting retries; carries the raw error."""


@dataclass
class FMClient:
    """Remote foundation-model client config; subclasses implement ``_send``."""

    endpoint: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    kind: str = "captioner"

    def call(self, request: dict) -> dict:
        last = None
        for attempt in range(self.max_retries + 1):
            try:
                return self._send(request)
            except Exception as exc:  # noqa: BLE001 - transport errors vary by backend
                last = exc
                if attempt < self.max_retries:
                    time.sleep(min(2.0**attempt * 0.1, 2.0))
        raise ClientError(f"{self.kind} exhausted {self.max_retries + 1} attempts: {last!r}") from last

    def _send(self, request: dict) -> dict:
        raise NotImplementedError


class HTTPClient(FMClient):
    """JSON-over-HTTP client; env-style configuration happens at the CLI."""

    def _send(self, request: dict) -> dict:
        import requests

        resp = requests.post(self.endpoint, json=request, timeout=self.timeout)
        resp.raise_for_status()
        payload = resp.json()
        if "text" not in payload:
            raise ValueError(f"malformed client response: {payload!r}")
        return payload


class MockCaptioner(FMClient):
    """Deterministic caption from the request metadata (no network)."""

    def __init__(self, **kwargs):
        super().__init__(kind="captioner", **kwargs)

    def _send(self, request: dict) -> dict:
        meta = request.get("meta", {})
        category = meta.get("category", "object").replace("_", " ")
        color = meta.get("color", "gray")
        sector = meta.get("sector", "front").replace("_", " ")
        return {"text": f"A {color} {category} is in the {sector} of the scene."}


class MockParaphraser(FMClient):
    """Deterministic synonym substitution from the bundled table."""

    def __init__(self, **kwargs):
        super().__init__(kind="paraphraser", **kwargs)

    def _send(self, request: dict) -> dict:
        sentence = request["sentence"]
        for src, dst in SYNONYMS.items():
            sentence = re.sub(rf"\b{src}\b", dst, sentence)
            sentence = re.sub(rf"\b{src.capitalize()}\b", dst.capitalize(), sentence)
        return {"text": sentence}


@dataclass
class AnnotationJob:
    frames: list
    sampling_rate: float = 0.2
    seed: int = 0
    caption_prompt: str = CAPTION_PROMPT
    paraphrase_prompts: tuple = PARAPHRASE_PROMPTS
    concurrency: int = 1

    def __post_init__(self):
        if not (0.0 < self.sampling_rate <= 1.0):
            raise ValueError(f"sampling_rate must lie in (0, 1], got {self.sampling_rate}")
        if not self.paraphrase_prompts:
            raise ValueError("paraphrase templates must be nonempty")


def box_corners_3d(box) -> np.ndarray:
    """All 8 corners of an oriented box, world coordinates."""
    footprint = bev_corners(box)
    lo, hi = box.z - 0.5 * box.h, box.z + 0.5 * box.h
    return np.array([[x, y, z] for x, y in footprint for z in (lo, hi)])


def box_fully_visible(box, cam) -> bool:
    """True iff all 8 projected corners land inside the image rectangle."""
    corners = box_corners_3d(box)
    uv, depth = cam.project(corners)
    if np.any(depth <= 0.1):
        return False
    return bool(np.all(cam.contains(uv)))


def sample_and_filter(frames, rate: float, seed: int, rig: CameraRig | None = None):
    """Seeded uniform sample of ceil(rate*N) frames, then drop frames whose
    referred box is clipped by its sector camera's image border.

    Returns (kept, filtered_out).
    """
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    frames = list(frames)
    rig = rig or make_default_rig()
    n_pick = math.ceil(rate * len(frames))
    rng = np.random.default_rng([seed, len(frames)])
    picked_idx = sorted(int(i) for i in rng.choice(len(frames), size=n_pick, replace=False))
    kept, filtered = [], []
    for i in picked_idx:
        frame = frames[i]
        cam = rig.by_name(frame.viewpoint)
        if box_fully_visible(frame.referred, cam):
            kept.append(frame)
        else:
            filtered.append(frame)
    return kept, filtered


def draw_referred_box(image_path, box, cam) -> bytes:
    """PNG bytes of the camera view with the referred box outlined in red."""
    with Image.open(image_path) as img:
        img = img.convert("RGB")
        uv, depth = cam.project(box_corners_3d(box))
        if np.all(depth > 0.1):
            draw = ImageDraw.Draw(img)
            x0, y0 = uv[:, 0].min(), uv[:, 1].min()
            x1, y1 = uv[:, 0].max(), uv[:, 1].max()
            draw.rectangle([x0, y0, x1, y1], outline=(255, 0, 0), width=2)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()


def caption(frame, client: FMClient, corpus_root=None, rig: CameraRig | None = None,
            prompt: str = CAPTION_PROMPT) -> str:
    """Step-two caption for a frame's referred object.

    The request carries the verbatim captioning instruction, the sector view
    with the red box drawn (when the corpus root is available), and the GT
    metadata mock clients deterministically template from.
    """
    rig = rig or make_default_rig()
    request: dict = {
        "prompt": prompt,
        "meta": {
            "category": frame.category,
            "sector": frame.viewpoint,
            "color": _frame_color(frame),
        },
    }
    if corpus_root is not None:
        cam = rig.by_name(frame.viewpoint)
        image_path = Path(corpus_root) / frame.image_refs[list(rig.cameras).index(cam)]
        if image_path.exists():
            request["image"] = base64.b64encode(draw_referred_box(image_path, frame.referred, cam)).decode("ascii")
    return client.call(request)["text"]


def _frame_color(frame) -> str:
    for idx, (box, cat) in enumerate(frame.scene_boxes):
        if cat == frame.category and abs(box.x - frame.referred.x) < 1e-6 and abs(box.y - frame.referred.y) < 1e-6:
            return object_color(frame.scene_id, idx, cat)
    return "gray"


def paraphrase_and_localize(description: str, viewpoint: str, client: FMClient,
                            seed: int = 0, ordinal: int = 0,
                            templates: tuple = PARAPHRASE_PROMPTS) -> str:
    """Step-three rewording plus viewpoint prefix.

    One of the rewording templates (cycled by seed and sample ordinal) rides
    along with the sentence; the sector warning is prefixed to the result.
    """
    if not description or not description.strip():
        raise ValueError("description is empty")
    if viewpoint not in ("front", "front_right", "back_right", "back", "back_left", "front_left"):
        raise ValueError(f"unknown viewpoint {viewpoint!r}")
    template = templates[(seed + ordinal) % len(templates)]
    reworded = client.call({"prompt": template, "sentence": description})["text"]
    prefix = SECTOR_PREFIXES[(seed + ordinal) % len(SECTOR_PREFIXES)]
    return prefix.format(sector=viewpoint.replace("_", " ")) + " " + reworded


def run_pipeline(job: AnnotationJob, captioner: FMClient, paraphraser: FMClient,
                 out_dir, corpus_root=None, rig: CameraRig | None = None) -> dict:
    """Full three-step pipeline; writes samples/failures/review-queue files.

    Output accounting is exact: emitted = sampled - filtered - failed.
    Returns the summary dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rig = rig or make_default_rig()
    kept, filtered = sample_and_filter(job.frames, job.sampling_rate, job.seed, rig)

    def annotate_one(args):
        ordinal, frame = args
        try:
            desc = caption(frame, captioner, corpus_root=corpus_root, rig=rig,
                           prompt=job.caption_prompt)
            prompt = paraphrase_and_localize(desc, frame.viewpoint, paraphraser,
                                             seed=job.seed, ordinal=ordinal,
                                             templates=job.paraphrase_prompts)
            return frame, prompt, None
        except ClientError as exc:
            return frame, None, str(exc)

    items = list(enumerate(kept))
    if job.concurrency > 1:
        with ThreadPoolExecutor(max_workers=job.concurrency) as pool:
            results = list(pool.map(annotate_one, items))
    else:
        results = [annotate_one(item) for item in items]

    emitted: list[GroundingSample] = []
    failures: list[dict] = []
    for frame, prompt, error in results:
        if error is not None:
            failures.append({"sample_id": frame.sample_id, "step": "annotate", "error": error})
            continue
        d = frame.to_dict()
        d["prompt"] = prompt
        emitted.append(GroundingSample.from_dict(d))

    emitted.sort(key=lambda s: s.sample_id)
    failures.sort(key=lambda f: f["sample_id"])
    write_samples(out / "samples.jsonl", emitted)
    with open(out / "failures.jsonl", "w", encoding="utf-8") as fh:
        for f in failures:
            fh.write(json.dumps(f) + "\n")
    with open(out / "review_queue.jsonl", "w", encoding="utf-8") as fh:
        for s in emitted:
            fh.write(json.dumps({"sample_id": s.sample_id, "prompt": s.prompt,
                                 "category": s.category, "viewpoint": s.viewpoint,
                                 "status": "pending"}) + "\n")

    summary = {
        "sampled": len(kept) + len(filtered),
        "filtered": len(filtered),
        "failed": len(failures),
        "emitted": len(emitted),
    }
    assert summary["emitted"] == summary["sampled"] - summary["filtered"] - summary["failed"]
    log.info("annotation pipeline: %s", summary)
    return summary
