"""Two-stage detect-then-match baseline and the random/best reference selectors.

Stage one is a detector interface: any source of per-frame proposals with
feature vectors. The repo ships an oracle-with-noise detector (jittered
ground-truth boxes plus distractors) standing in for a trained 3D detector;
real detector output loads from the same JSON-Lines proposal format. Stage
two scores proposals against the sentence embedding through two small MLPs
and picks the argmax.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from bevground.geometry import Box3D, iou_3d
from bevground.data.schema import CATEGORIES
from bevground.text import TextEmbeddings

log = logging.getLogger(__name__)

MAX_PROPOSALS = 200  # per-frame cap, highest score first


@dataclass
class Proposal:
    box: Box3D
    feature: np.ndarray
    score: float
    category: str

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if not np.all(np.isfinite(self.feature)):
            raise ValueError("proposal feature contains non-finite values")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"proposal score must lie in [0, 1], got {self.score}")

    def to_dict(self) -> dict:
        return {
            "box": self.box.to_list(),
            "score": self.score,
            "category": self.category,
            "feature": [float(v) for v in self.feature],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Proposal":
        return cls(Box3D.from_list(d["box"]), np.asarray(d["feature"]), float(d["score"]), d["category"])


@dataclass
class ProposalFrame:
    frame_id: str
    proposals: list[Proposal] = field(default_factory=list)

    def capped(self, limit: int = MAX_PROPOSALS) -> "ProposalFrame":
        if len(self.proposals) <= limit:
            return self
        order = sorted(range(len(self.proposals)), key=lambda i: (-self.proposals[i].score, i))
        return ProposalFrame(self.frame_id, [self.proposals[i] for i in order[:limit]])


def write_proposals(path, frames) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            fh.write(json.dumps({"frame_id": f.frame_id,
                                 "proposals": [p.to_dict() for p in f.proposals]}) + "\n")


def read_proposals(path) -> list[ProposalFrame]:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            frames.append(ProposalFrame(d["frame_id"], [Proposal.from_dict(p) for p in d["proposals"]]))
    return frames


# --- synthetic oracle-with-noise detector -----------------------------------

FEATURE_DIM = 9 + len(CATEGORIES)  # geometry block + one-hot category


def proposal_feature(box: Box3D, category: str, rng=None, noise: float = 0.01) -> np.ndarray:
    """Geometry + category descriptor standing in for learned ROI features."""
    vec = np.array(
        [
            box.x / 54.0,
            box.y / 54.0,
            box.z / 3.0,
            box.l / 12.0,
            box.w / 3.0,
            box.h / 4.0,
            math.sin(box.alpha),
            math.cos(box.alpha),
            math.hypot(box.x, box.y) / 54.0,
        ],
        dtype=np.float64,
    )
    onehot = np.zeros(len(CATEGORIES))
    onehot[CATEGORIES.index(category)] = 1.0
    out = np.concatenate([vec, onehot])
    if rng is not None and noise > 0:
        out = out + rng.normal(0.0, noise, size=out.shape)
    return out


def synthetic_detections(sample, seed: int = 0, jitter_xy: float = 0.25,
                         jitter_dim: float = 0.04, jitter_yaw: float = 0.05,
                         miss_rate: float = 0.05, n_distractors: tuple = (0, 3)) -> ProposalFrame:
    """Jittered ground-truth boxes plus random distractors, scored by detection
    quality (not referent relevance)."""
    digest = hashlib.blake2b(sample.sample_id.encode("utf-8"), digest_size=4).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest, "little")])
    proposals = []
    for box, cat in sample.scene_boxes:
        if rng.uniform() < miss_rate:
            continue
        jit = Box3D(
            box.x + rng.normal(0, jitter_xy),
            box.y + rng.normal(0, jitter_xy),
            box.z + rng.normal(0, 0.1),
            box.l * math.exp(rng.normal(0, jitter_dim)),
            box.w * math.exp(rng.normal(0, jitter_dim)),
            box.h * math.exp(rng.normal(0, jitter_dim)),
            box.alpha + rng.normal(0, jitter_yaw),
        )
        quality = iou_3d(jit, box)
        score = float(np.clip(0.55 * quality + rng.uniform(0.1, 0.45), 0.0, 1.0))
        proposals.append(Proposal(jit, proposal_feature(jit, cat, rng), score, cat))
    for _ in range(int(rng.integers(n_distractors[0], n_distractors[1] + 1))):
        cat = CATEGORIES[int(rng.integers(0, len(CATEGORIES)))]
        r = rng.uniform(5.0, 50.0)
        theta = rng.uniform(-math.pi, math.pi)
        box = Box3D(r * math.cos(theta), r * math.sin(theta), rng.uniform(-1.5, 0.5),
                    rng.uniform(0.5, 8.0), rng.uniform(0.4, 3.0), rng.uniform(0.5, 3.5),
                    rng.uniform(-math.pi, math.pi))
        score = float(rng.uniform(0.05, 0.5))
        proposals.append(Proposal(box, proposal_feature(box, cat, rng), score, cat))
    return ProposalFrame(sample.sample_id, proposals).capped()


# --- matching network ---------------------------------------------------------


class MatchHead(nn.Module):
    """Two 2-layer MLPs aligning language and object features; the score of a
    proposal is the inner product of the two projections."""

    def __init__(self, d_text: int, d_obj: int, hidden: int = 256, d_match: int = 128):
        super().__init__()
        self.lang_mlp = nn.Sequential(nn.Linear(d_text, hidden), nn.ReLU(inplace=True),
                                      nn.Linear(hidden, d_match))
        self.obj_mlp = nn.Sequential(nn.Linear(d_obj, hidden), nn.ReLU(inplace=True),
                                     nn.Linear(hidden, d_match))

    def scores(self, sentence: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        """(d_text,), (K, d_obj) -> (K,) match scores."""
        lang = self.lang_mlp(sentence)
        obj = self.obj_mlp(features)
        return obj @ lang


def match_scores(proposals, embeddings: TextEmbeddings, head: MatchHead) -> np.ndarray:
    """Score every proposal against the sentence embedding."""
    if not proposals:
        raise ValueError("match_scores needs at least one proposal")
    dtype = next(head.parameters()).dtype
    sentence = torch.as_tensor(embeddings.sentence, dtype=dtype)
    feats = torch.as_tensor(np.stack([p.feature for p in proposals]), dtype=dtype)
    with torch.no_grad():
        return head.scores(sentence, feats).cpu().numpy()


def select_match(proposals, embeddings: TextEmbeddings, head: MatchHead) -> int:
    return int(np.argmax(match_scores(proposals, embeddings, head)))


@dataclass
class MatcherTrainConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 0.01
    iou_threshold: float = 0.25
    seed: int = 0


def train_matcher(samples, frames, embeddings, head: MatchHead,
                  config: MatcherTrainConfig = MatcherTrainConfig()) -> dict:
    """Cross-entropy training of the match head on detector proposals.

    The positive class per frame is the proposal with maximum 3D IoU to the
    referred box, requiring IoU >= ``iou_threshold``; frames without one are
    skipped and counted. Only head parameters update (SGD); text embeddings
    enter as fixed inputs. Returns {'loss_curve', 'skipped', 'used'}.
    """
    by_id = {f.frame_id: f for f in frames}
    items = []
    skipped = 0
    for sample in samples:
        frame = by_id.get(sample.sample_id)
        if frame is None or not frame.proposals:
            skipped += 1
            continue
        ious = [iou_3d(p.box, sample.referred) for p in frame.proposals]
        best = int(np.argmax(ious))
        if ious[best] < config.iou_threshold:
            skipped += 1
            continue
        emb = embeddings[sample.sample_id] if isinstance(embeddings, dict) else embeddings(sample)
        items.append((emb, frame.proposals, best))
    if not items:
        raise ValueError("no usable training frames: every frame lacks a qualifying proposal")
    if skipped:
        log.info("train_matcher: skipped %d frame(s) without an IoU-qualified proposal", skipped)

    dtype = next(head.parameters()).dtype
    tensors = [
        (
            torch.as_tensor(emb.sentence, dtype=dtype),
            torch.as_tensor(np.stack([p.feature for p in props]), dtype=dtype),
            pos,
        )
        for emb, props, pos in items
    ]

    optimizer = torch.optim.SGD(head.parameters(), lr=config.lr)
    loss_curve = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(tensors))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            losses = []
            for i in batch:
                sentence, feats, pos = tensors[int(i)]
                scores = head.scores(sentence, feats)
                losses.append(torch.nn.functional.cross_entropy(
                    scores.unsqueeze(0), torch.tensor([pos])))
            loss = torch.stack(losses).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        loss_curve.append(epoch_loss / len(tensors))
    return {"loss_curve": loss_curve, "skipped": skipped, "used": len(tensors)}


def matcher_cross_entropy(head: MatchHead, sentence: torch.Tensor,
                          features: torch.Tensor, positive: int) -> torch.Tensor:
    """Single-frame softmax cross-entropy over proposal scores."""
    scores = head.scores(sentence, features)
    return torch.nn.functional.cross_entropy(scores.unsqueeze(0), torch.tensor([positive]))


# --- reference selectors -------------------------------------------------------


def reference_select(mode: str, sample=None, proposals=None, rng=None) -> Box3D:
    """GT-Rand / Pred-Rand / Pred-Best reference predictions.

    ``gt-rand`` draws a ground-truth scene box; ``pred-rand`` draws a
    proposal; ``pred-best`` takes the highest-score proposal (ties to the
    lowest index). Random modes need a seeded ``rng``.
    """
    if mode == "gt-rand":
        if sample is None or not sample.scene_boxes:
            raise ValueError("gt-rand needs a sample with scene boxes")
        rng = rng or np.random.default_rng(0)
        return sample.scene_boxes[int(rng.integers(0, len(sample.scene_boxes)))][0]
    if mode == "pred-rand":
        if not proposals:
            raise ValueError("pred-rand needs proposals")
        rng = rng or np.random.default_rng(0)
        return proposals[int(rng.integers(0, len(proposals)))].box
    if mode == "pred-best":
        if not proposals:
            raise ValueError("pred-best needs proposals")
        scores = np.array([p.score for p in proposals])
        return proposals[int(np.argmax(scores))].box
    raise ValueError(f"unknown reference mode {mode!r}")
