"""Training objective: center heatmap, proposal classification, box regression.

Total loss is the (weighted, default 1.0 each) sum of a penalty-reduced
Gaussian focal term on the heatmap, a focal classification term over
proposal confidences, and an L1 term over the encoded regression targets of
matched proposals. Targets are matched to proposals by minimum-cost
bipartite assignment over cost = l_cls*(1 - p) + l_box*|reg - target|_1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from bevground.model.grids import GridSpec
from bevground.model.heads import REG_DIMS, encode_box_target
from bevground.model.matching import hungarian_match

EPS_SIGMOID = 1e-4


@dataclass(frozen=True)
class LossWeights:
    heatmap: float = 1.0
    cls: float = 1.0
    reg: float = 1.0
    match_cls: float = 1.0   # lambda on (1 - p) in the matching cost
    match_box: float = 0.25  # lambda on the L1 box term in the matching cost

    def to_dict(self) -> dict:
        return {
            "heatmap": self.heatmap, "cls": self.cls, "reg": self.reg,
            "match_cls": self.match_cls, "match_box": self.match_box,
        }


def clip_sigmoid(logits: torch.Tensor) -> torch.Tensor:
    return torch.clamp(torch.sigmoid(logits), min=EPS_SIGMOID, max=1.0 - EPS_SIGMOID)


def gaussian_focal_loss(heat_logits: torch.Tensor, target: torch.Tensor,
                        alpha: float = 2.0, beta: float = 4.0) -> torch.Tensor:
    """Penalty-reduced focal loss against a Gaussian-splatted target heatmap.

    Cells where the target equals 1 are positives; everywhere else the
    penalty is down-weighted by (1 - target)^beta. Normalized by the number
    of positives.
    """
    pred = clip_sigmoid(heat_logits)
    target = target.to(pred.dtype).reshape(pred.shape)
    pos = (target == 1.0).to(pred.dtype)
    neg = 1.0 - pos
    pos_loss = -((1.0 - pred) ** alpha) * torch.log(pred) * pos
    neg_loss = -((1.0 - target) ** beta) * (pred ** alpha) * torch.log(1.0 - pred) * neg
    n_pos = pos.sum().clamp(min=1.0)
    return (pos_loss.sum() + neg_loss.sum()) / n_pos


def focal_cls_loss(conf_logits: torch.Tensor, pos_mask: torch.Tensor,
                   gamma: float = 2.0, alpha: float = 0.25) -> torch.Tensor:
    """Binary focal loss over proposal confidences; matched proposals positive."""
    p = clip_sigmoid(conf_logits)
    pos = pos_mask.to(p.dtype)
    loss_pos = -alpha * ((1.0 - p) ** gamma) * torch.log(p) * pos
    loss_neg = -(1.0 - alpha) * (p ** gamma) * torch.log(1.0 - p) * (1.0 - pos)
    n_pos = pos.sum().clamp(min=1.0)
    return (loss_pos.sum() + loss_neg.sum()) / n_pos


def l1_reg_loss(pred_reg: torch.Tensor, target_reg: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over matched proposals' encoded regression vectors."""
    if pred_reg.shape != target_reg.shape:
        raise ValueError(f"regression shape mismatch {tuple(pred_reg.shape)} vs {tuple(target_reg.shape)}")
    return (pred_reg - target_reg.to(pred_reg.dtype)).abs().mean()


def encode_targets_per_proposal(target_boxes, positions, spec: GridSpec) -> np.ndarray:
    """(K, M, 8) regression target of each box when anchored at each proposal cell."""
    pos = positions.detach().cpu().numpy()
    out = np.empty((pos.shape[0], len(target_boxes), REG_DIMS), dtype=np.float64)
    for m, box in enumerate(target_boxes):
        for k in range(pos.shape[0]):
            out[k, m] = encode_box_target(box, pos[k], spec)
    return out


def match_proposals(head_out: torch.Tensor, target_enc: np.ndarray,
                    weights: LossWeights) -> list[int]:
    """Assign each target its proposal by minimum-cost bipartite matching."""
    with torch.no_grad():
        conf = torch.sigmoid(head_out[:, REG_DIMS]).cpu().numpy().astype(np.float64)
        reg = head_out[:, :REG_DIMS].cpu().numpy().astype(np.float64)
    l1 = np.abs(reg[:, None, :] - target_enc).sum(axis=2)  # (K, M)
    cost = weights.match_cls * (1.0 - conf)[:, None] + weights.match_box * l1
    return hungarian_match(cost)


def loss_all(heat_logits: torch.Tensor, head_out: torch.Tensor, positions: torch.Tensor,
             target_boxes, target_heat, spec: GridSpec,
             weights: LossWeights = LossWeights()) -> dict:
    """Full objective for one sample; returns components, total, assignment.

    ``heat_logits``: (1, 1, H, W); ``head_out``: (K, 9) at ``positions``;
    ``target_boxes``: the ground-truth Box3D list; ``target_heat``: (H, W)
    Gaussian-splatted target.
    """
    k = head_out.shape[0]
    if k == 0:
        raise ValueError("no proposals to supervise")
    if len(target_boxes) == 0:
        raise ValueError("loss requires at least one target")
    if len(target_boxes) > k:
        raise ValueError(f"{len(target_boxes)} targets exceed {k} proposals")

    target_enc = encode_targets_per_proposal(target_boxes, positions, spec)
    assign = match_proposals(head_out, target_enc, weights)
    assign_t = torch.as_tensor(assign, dtype=torch.long)

    pos_mask = torch.zeros(k, dtype=torch.bool)
    pos_mask[assign_t] = True

    heat_t = torch.as_tensor(np.asarray(target_heat), dtype=head_out.dtype)
    l_heat = gaussian_focal_loss(heat_logits, heat_t)
    l_cls = focal_cls_loss(head_out[:, REG_DIMS], pos_mask)

    matched_pred = head_out[assign_t, :REG_DIMS]
    matched_tgt = np.stack([target_enc[assign[m], m] for m in range(len(assign))])
    l_reg = l1_reg_loss(matched_pred, torch.as_tensor(matched_tgt, dtype=head_out.dtype))

    total = weights.heatmap * l_heat + weights.cls * l_cls + weights.reg * l_reg
    return {
        "heatmap": l_heat,
        "cls": l_cls,
        "reg": l_reg,
        "total": total,
        "assignment": assign,
    }
