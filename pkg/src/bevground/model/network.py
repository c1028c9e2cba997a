"""The one-stage grounding network: text-conditioned BEV encoding, heatmap
proposal selection, attention decoding, and box prediction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from bevground.cameras import make_default_rig
from bevground.model.decoder import GroundingDecoder, select_proposals
from bevground.model.encoders import ImageBEVLift, PointGridEncoder
from bevground.model.fusion import TrimodalEncoder
from bevground.model.grids import GridSpec
from bevground.model.heads import DetectionHead, HeatmapHead, decode_boxes
from bevground.model.losses import LossWeights
from bevground.text import EncoderSpec, TextEmbeddings


@dataclass
class ModelConfig:
    """Declarative network configuration; embedded verbatim in checkpoints."""

    grid: GridSpec = field(default_factory=GridSpec)
    channels: int = 64
    d_model: int = 64
    n_heads: int = 4
    k_proposals: int = 200
    d_text: int = 32
    text_encoder: str = "hash-test"
    text_seed: int = 0
    use_images: bool = False
    image_channels: int = 32
    image_w: int = 320
    image_h: int = 180
    loss: LossWeights = field(default_factory=LossWeights)

    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec(name=self.text_encoder, dim=self.d_text, seed=self.text_seed)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "channels", "d_model", "n_heads", "k_proposals", "d_text",
            "text_encoder", "text_seed", "use_images", "image_channels",
            "image_w", "image_h",
        )}
        d["grid"] = self.grid.to_dict()
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["grid"] = GridSpec.from_dict(d["grid"])
        d["loss"] = LossWeights(**d["loss"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "ModelConfig":
        return cls.from_dict(json.loads(s))


class BEVGroundingModel(nn.Module):
    """Grounds one prompt per forward pass: points (+ optional six views) in,
    K candidate boxes with confidences out; the argmax box is the prediction."""

    def __init__(self, config: ModelConfig, rig=None):
        super().__init__()
        self.config = config
        self.spec = config.grid
        # Shared trunk first, image branch last from an isolated RNG stream:
        # for a fixed seed the trunk initializes identically with and without
        # the image branch, so a lidar-only checkpoint warm-starts the full
        # model exactly.
        self.point_encoder = PointGridEncoder(self.spec, config.channels)
        self.trimodal = TrimodalEncoder(config.channels, config.d_text, image_channels=0)
        self.heatmap_head = HeatmapHead(config.channels)
        self.decoder = GroundingDecoder(config.d_model, config.n_heads,
                                        config.channels, config.d_text)
        self.det_head = DetectionHead(config.d_model)
        self.image_lift = None
        if config.use_images:
            rig = rig or make_default_rig(config.image_w, config.image_h)
            rng_state = torch.random.get_rng_state()
            torch.manual_seed(0x1A6E)
            self.image_lift = ImageBEVLift(self.spec, rig, config.image_channels)
            self.trimodal.enable_image_path(config.image_channels)
            torch.random.set_rng_state(rng_state)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def forward(self, points: np.ndarray, images: torch.Tensor | None,
                text: TextEmbeddings, attn_out: list | None = None) -> dict:
        """One grounding pass; ``images`` is (6, 3, h, w) or None for lidar-only."""
        point_grid = self.point_encoder.encode_points(points)

        image_grid = None
        if images is not None:
            if self.image_lift is None:
                raise ValueError("model configured without an image branch")
            image_grid = self.image_lift(images.to(self.dtype))

        sentence = torch.as_tensor(text.sentence, dtype=self.dtype)
        bev = self.trimodal(point_grid, image_grid, sentence)
        heat_logits = self.heatmap_head(bev)
        proposals = select_proposals(bev, heat_logits, self.config.k_proposals)

        word = torch.as_tensor(text.word, dtype=self.dtype)
        refined = self.decoder(proposals.features, bev, word, attn_out=attn_out)
        head_out = self.det_head(refined)
        return {
            "bev": bev,
            "heat_logits": heat_logits,
            "proposals": proposals,
            "head_out": head_out,
        }

    @torch.no_grad()
    def predict(self, points: np.ndarray, images: torch.Tensor | None,
                text: TextEmbeddings):
        """Best box and its confidence for one sample."""
        out = self.forward(points, images, text)
        boxes, conf = decode_boxes(out["head_out"], out["proposals"].positions, self.spec)
        best = int(np.argmax(conf))
        return boxes[best], float(conf[best])
