"""Two-stage training: LiDAR branch first, then image-branch fine-tuning.

Runs are deterministic given the seed: parameter init, batch order, and the
loss sequence all derive from it, and checkpoints carry enough state
(weights, optimizer moments, step counter, configs) to resume exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from bevground.cameras import CameraRig, make_default_rig
from bevground.data.schema import load_points
from bevground.model.heads import decode_boxes, heatmap_target
from bevground.model.losses import loss_all
from bevground.model.network import BEVGroundingModel, ModelConfig
from bevground.text import build_encoder

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    seed: int = 0
    steps_stage1: int = 2000
    steps_stage2: int = 0
    batch_size: int = 2
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-4
    lr_decay_at: float = 1.0     # fraction of a stage after which lr decays
    lr_decay_factor: float = 0.3
    # Stage-2 learning-rate multiplier for everything outside the camera
    # pathway. 0 freezes the LiDAR-trained trunk while the image branch
    # learns, which keeps the fused model from drifting off its stage-1
    # solution on small corpora.
    stage2_trunk_lr_scale: float = 0.0
    log_every: int = 100

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "seed", "steps_stage1", "steps_stage2", "batch_size",
            "lr_stage1", "lr_stage2", "lr_decay_at", "lr_decay_factor",
            "stage2_trunk_lr_scale", "log_every",
        )}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def lr_at(self, step: int) -> float:
        """Stateless per-step learning rate (resume-safe)."""
        if step < self.steps_stage1:
            base, stage_len, within = self.lr_stage1, self.steps_stage1, step
        else:
            base, stage_len = self.lr_stage2, max(self.steps_stage2, 1)
            within = step - self.steps_stage1
        if self.lr_decay_at < 1.0 and within >= self.lr_decay_at * stage_len:
            return base * self.lr_decay_factor
        return base


class CorpusData:
    """Sample access for training/prediction: points, views, text embeddings."""

    def __init__(self, root, samples, model_cfg: ModelConfig):
        self.root = Path(root)
        self.samples = list(samples)
        self.encoder = build_encoder(model_cfg.encoder_spec())
        self._points: dict[str, np.ndarray] = {}
        self._text: dict[str, object] = {}

    def __len__(self) -> int:
        return len(self.samples)

    def points(self, sample) -> np.ndarray:
        pts = self._points.get(sample.lidar_ref)
        if pts is None:
            pts = load_points(self.root / sample.lidar_ref)
            self._points[sample.lidar_ref] = pts
        return pts

    def images(self, sample) -> torch.Tensor:
        views = []
        for ref in sample.image_refs:
            with Image.open(self.root / ref) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0 - 0.5
            views.append(torch.from_numpy(arr.transpose(2, 0, 1)))
        return torch.stack(views)

    def text(self, sample):
        emb = self._text.get(sample.prompt)
        if emb is None:
            emb = self.encoder.encode(sample.prompt)
            self._text[sample.prompt] = emb
        return emb


def load_rig(root) -> CameraRig | None:
    path = Path(root) / "calib.json"
    return CameraRig.load(path) if path.exists() else None


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, 777, epoch]).permutation(n)


def _batch_indices(step: int, n: int, batch: int, seed: int) -> list[int]:
    steps_per_epoch = max(1, math.ceil(n / batch))
    epoch, within = divmod(step, steps_per_epoch)
    perm = _epoch_order(seed, epoch, n)
    return [int(i) for i in perm[within * batch : within * batch + batch]]


def _sample_loss(model: BEVGroundingModel, data: CorpusData, sample, with_images: bool):
    images = data.images(sample) if with_images else None
    out = model.forward(data.points(sample), images, data.text(sample))
    target_heat = heatmap_target([sample.referred], model.spec)
    return loss_all(
        out["heat_logits"], out["head_out"], out["proposals"].positions,
        [sample.referred], target_heat, model.spec, model.config.loss,
    )


def train(samples, root, model_cfg: ModelConfig, train_cfg: TrainConfig,
          checkpoint_path=None, resume_from=None, warm_start=None):
    """Train on a corpus; returns (model, history).

    Stage 1 covers steps [0, steps_stage1) lidar-only; stage 2 continues for
    steps_stage2 more with the image branch active (requires
    ``model_cfg.use_images``). ``resume_from`` restores an exact state;
    ``warm_start`` copies the matching weights out of a (typically
    lidar-only) checkpoint and starts at its recorded step, so a full model
    can take over a finished stage 1.
    """
    if not samples:
        raise ValueError("training requires a nonempty corpus")
    if train_cfg.steps_stage2 > 0 and not model_cfg.use_images:
        raise ValueError("stage 2 needs use_images=True in the model config")
    if resume_from is not None and warm_start is not None:
        raise ValueError("resume_from and warm_start are mutually exclusive")

    if resume_from is not None:
        # Weights, optimizer moments, and the step counter come from the file;
        # the caller's train_cfg governs the (possibly extended) schedule.
        model, model_cfg, _, opt_payload, start_step = load_checkpoint(resume_from)
    else:
        torch.manual_seed(train_cfg.seed)
        rig = load_rig(root) if model_cfg.use_images else None
        model = BEVGroundingModel(model_cfg, rig=rig)
        opt_payload = None
        start_step = 0
        if warm_start is not None:
            start_step = _warm_start(model, warm_start)

    data = CorpusData(root, samples, model_cfg)
    total_steps = train_cfg.steps_stage1 + train_cfg.steps_stage2
    history: list[dict] = []

    stage = 1 if start_step < train_cfg.steps_stage1 else 2
    optimizer = _make_optimizer(model, train_cfg, stage)
    if opt_payload is not None:
        _load_optimizer(optimizer, model, opt_payload)

    model.train()
    for step in range(start_step, total_steps):
        if step == train_cfg.steps_stage1 and stage == 1:
            stage = 2
            optimizer = _make_optimizer(model, train_cfg, stage)
        for group in optimizer.param_groups:
            group["lr"] = train_cfg.lr_at(step) * group.get("lr_scale", 1.0)
        with_images = stage == 2
        indices = _batch_indices(step, len(data), train_cfg.batch_size, train_cfg.seed)
        losses = [_sample_loss(model, data, data.samples[i], with_images) for i in indices]
        total = torch.stack([l["total"] for l in losses]).mean()
        optimizer.zero_grad()
        total.backward()
        optimizer.step()

        record = {
            "step": step,
            "stage": stage,
            "total": float(total.detach()),
            "heatmap": float(np.mean([float(l["heatmap"].detach()) for l in losses])),
            "cls": float(np.mean([float(l["cls"].detach()) for l in losses])),
            "reg": float(np.mean([float(l["reg"].detach()) for l in losses])),
        }
        history.append(record)
        if train_cfg.log_every and (step + 1) % train_cfg.log_every == 0:
            log.info("step %d stage %d loss %.4f", step + 1, stage, record["total"])

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizer, train_cfg, total_steps)
    return model, history


def _is_image_param(name: str) -> bool:
    return "image_lift" in name or "visual_fuse" in name


def _make_optimizer(model: BEVGroundingModel, cfg: TrainConfig, stage: int):
    if stage == 1:
        groups = [{"params": list(model.parameters()), "lr": cfg.lr_stage1, "lr_scale": 1.0}]
        return torch.optim.Adam(groups)
    image, trunk = [], []
    for name, p in model.named_parameters():
        (image if _is_image_param(name) else trunk).append(p)
    groups = [{"params": image, "lr": cfg.lr_stage2, "lr_scale": 1.0}]
    if cfg.stage2_trunk_lr_scale > 0.0:
        groups.append({
            "params": trunk,
            "lr": cfg.lr_stage2 * cfg.stage2_trunk_lr_scale,
            "lr_scale": cfg.stage2_trunk_lr_scale,
        })
    return torch.optim.Adam(groups)


def _warm_start(model: BEVGroundingModel, checkpoint_path) -> int:
    """Copy matching weights from another checkpoint; returns its step count.

    Parameters absent from the file (the image branch, when warm-starting
    from a lidar-only run) keep their fresh initialization.
    """
    with np.load(checkpoint_path, allow_pickle=False) as blob:
        arrays = {k: blob[k] for k in blob.files}
    own = model.state_dict()
    loaded = 0
    for key, value in arrays.items():
        if not key.startswith("param/"):
            continue
        name = key[len("param/"):]
        if name in own and tuple(own[name].shape) == value.shape:
            own[name] = torch.from_numpy(value.copy()).to(own[name].dtype)
            loaded += 1
        else:
            raise ValueError(f"warm-start weight {name} does not fit the target model")
    model.load_state_dict(own)
    log.info("warm start: loaded %d arrays from %s", loaded, checkpoint_path)
    return int(arrays["global_step"])


# --- checkpoint container ----------------------------------------------------


def save_checkpoint(path, model: BEVGroundingModel, optimizer, train_cfg: TrainConfig,
                    global_step: int) -> None:
    """Single-file container: named float32 weight arrays + embedded JSON configs."""
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        arrays[f"param/{name}"] = tensor.detach().cpu().numpy().astype("<f4")
    if optimizer is not None:
        params = list(model.parameters())
        for i, p in enumerate(params):
            state = optimizer.state.get(p)
            if not state:
                continue
            arrays[f"opt/{i}/exp_avg"] = state["exp_avg"].cpu().numpy().astype("<f4")
            arrays[f"opt/{i}/exp_avg_sq"] = state["exp_avg_sq"].cpu().numpy().astype("<f4")
            arrays[f"opt/{i}/step"] = np.asarray(float(state["step"]), dtype="<f4")
    arrays["config_json"] = np.frombuffer(model.config.to_json().encode("utf-8"), dtype=np.uint8).copy()
    arrays["train_config_json"] = np.frombuffer(
        json.dumps(train_cfg.to_dict(), sort_keys=True).encode("utf-8"), dtype=np.uint8
    ).copy()
    arrays["global_step"] = np.asarray(global_step, dtype=np.int64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns (model, model_cfg, train_cfg, optimizer_payload, global_step)."""
    with np.load(path, allow_pickle=False) as blob:
        arrays = {k: blob[k] for k in blob.files}
    model_cfg = ModelConfig.from_json(bytes(arrays["config_json"]).decode("utf-8"))
    train_cfg = TrainConfig.from_dict(json.loads(bytes(arrays["train_config_json"]).decode("utf-8")))
    global_step = int(arrays["global_step"])

    model = BEVGroundingModel(model_cfg, rig=make_default_rig(model_cfg.image_w, model_cfg.image_h)
                              if model_cfg.use_images else None)
    state = {k[len("param/"):]: torch.from_numpy(v.copy()) for k, v in arrays.items()
             if k.startswith("param/")}
    model.load_state_dict(state)

    opt_payload: dict[int, dict] = {}
    for key, value in arrays.items():
        if not key.startswith("opt/"):
            continue
        _, idx, leaf = key.split("/")
        opt_payload.setdefault(int(idx), {})[leaf] = value.copy()
    return model, model_cfg, train_cfg, opt_payload or None, global_step


def _load_optimizer(optimizer, model: BEVGroundingModel, payload: dict) -> None:
    params = list(model.parameters())
    managed = {id(p) for g in optimizer.param_groups for p in g["params"]}
    for idx, leaves in payload.items():
        p = params[idx]
        if id(p) not in managed:  # trunk params while stage 2 trains the camera path
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(leaves["step"])),
            "exp_avg": torch.from_numpy(leaves["exp_avg"]).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(leaves["exp_avg_sq"]).to(p.dtype),
        }


# --- inference over a corpus -------------------------------------------------


def predict_corpus(model: BEVGroundingModel, samples, root, use_images: bool = False,
                   out_path=None) -> list[dict]:
    """Predict one box per sample; optionally write prediction JSONL."""
    model.eval()
    data = CorpusData(root, samples, model.config)
    rows = []
    for sample in samples:
        images = data.images(sample) if use_images else None
        box, conf = model.predict(data.points(sample), images, data.text(sample))
        rows.append({"sample_id": sample.sample_id, "box": box.to_list(), "confidence": conf})
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return rows
