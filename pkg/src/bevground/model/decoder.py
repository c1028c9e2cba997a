"""Heatmap-guided proposal selection and the attention grounding decoder."""

from __future__ import annotations

from dataclasses import dataclass

import math

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ProposalSet:
    """Top-K heatmap peaks: integer cell positions, features, heat scores."""

    positions: torch.Tensor  # (K, 2) long, rows (iy, ix)
    features: torch.Tensor   # (K, C)
    heat: torch.Tensor       # (K,)


def sinusoidal_pos_2d(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard 2D sine/cosine embedding of (iy, ix) cell coordinates.

    Half the channels encode y, half x; within each half the usual
    interleaved sin/cos over a geometric frequency ladder.
    """
    if dim % 4 != 0:
        raise ValueError(f"positional dim must be divisible by 4, got {dim}")
    half = dim // 2
    quarter = dim // 4
    dtype = positions.dtype if positions.is_floating_point() else torch.float32
    freq = torch.exp(torch.arange(quarter, dtype=dtype) * (-math.log(10000.0) / max(quarter - 1, 1)))
    pos = positions.to(dtype)
    out = torch.zeros(positions.shape[0], dim, dtype=dtype)
    for axis, offset in ((0, 0), (1, half)):
        ang = pos[:, axis : axis + 1] * freq.unsqueeze(0)
        out[:, offset : offset + half : 2] = torch.sin(ang)
        out[:, offset + 1 : offset + half : 2] = torch.cos(ang)
    return out


def select_proposals(bev: torch.Tensor, heat_logits: torch.Tensor, k: int) -> ProposalSet:
    """Pick the K best 3x3-local-max heatmap cells, row-major on ties.

    ``bev``: (1, C, H, W) features; ``heat_logits``: (1, 1, H, W). Features
    are gathered at the selected cells with sinusoidal position encodings
    added, so downstream attention is permutation-equivariant over queries.
    """
    _, c, h, w = bev.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > h * w:
        raise ValueError(f"k={k} exceeds grid cells {h * w}")
    heat = torch.sigmoid(heat_logits)
    pooled = F.max_pool2d(heat, kernel_size=3, stride=1, padding=1)
    peaks = (heat >= pooled).to(heat.dtype) * heat
    flat = peaks.reshape(-1)
    order = torch.argsort(-flat, stable=True)[:k]
    iy = torch.div(order, w, rounding_mode="floor")
    ix = order - iy * w
    positions = torch.stack([iy, ix], dim=1)
    feats = bev[0, :, iy, ix].transpose(0, 1)  # (K, C)
    feats = feats + sinusoidal_pos_2d(positions, c).to(feats.dtype)
    scores = heat.reshape(-1)[order]
    return ProposalSet(positions=positions, features=feats, heat=scores)


class AttentionBlock(nn.Module):
    """Multi-head attention plus FFN, residual and layer norm around both."""

    def __init__(self, dim: int, heads: int, ffn_mult: int = 2):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.d_head = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim),
            nn.ReLU(inplace=True),
            nn.Linear(ffn_mult * dim, dim),
        )

    def attention(self, queries: torch.Tensor, keys: torch.Tensor):
        """Returns (attended (Q, dim), weights (heads, Q, S))."""
        q = self.q_proj(queries).view(-1, self.heads, self.d_head).transpose(0, 1)
        k = self.k_proj(keys).view(-1, self.heads, self.d_head).transpose(0, 1)
        v = self.v_proj(keys).view(-1, self.heads, self.d_head).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(self.d_head)
        weights = torch.softmax(scores, dim=-1)
        attended = (weights @ v).transpose(0, 1).reshape(-1, self.dim)
        return self.out_proj(attended), weights

    def forward(self, x: torch.Tensor, kv: torch.Tensor | None = None, collect=None):
        attended, weights = self.attention(x, x if kv is None else kv)
        if collect is not None:
            collect.append(weights)
        x = self.norm1(x + attended)
        return self.norm2(x + self.ffn(x))


class GroundingDecoder(nn.Module):
    """Self-attention, spatial cross-attention over the fused BEV map, another
    self-attention, then semantic cross-attention over word embeddings."""

    def __init__(self, dim: int, heads: int, bev_channels: int, d_text: int):
        super().__init__()
        self.proposal_proj = nn.Linear(bev_channels, dim)
        self.bev_proj = nn.Linear(bev_channels, dim)
        self.word_proj = nn.Linear(d_text, dim)
        self.sa1 = AttentionBlock(dim, heads)
        self.spca = AttentionBlock(dim, heads)
        self.sa2 = AttentionBlock(dim, heads)
        self.seca = AttentionBlock(dim, heads)

    def forward(self, proposal_feats: torch.Tensor, bev: torch.Tensor,
                word: torch.Tensor, attn_out: list | None = None) -> torch.Tensor:
        """(K, C_bev) proposals, (1, C_bev, H, W) map, (L, d_text) words -> (K, dim)."""
        _, c, h, w = bev.shape
        tokens = bev[0].reshape(c, h * w).transpose(0, 1)  # (HW, C)
        iy, ix = torch.meshgrid(
            torch.arange(h, dtype=torch.long), torch.arange(w, dtype=torch.long), indexing="ij"
        )
        grid_pos = torch.stack([iy.reshape(-1), ix.reshape(-1)], dim=1)
        tokens = tokens + sinusoidal_pos_2d(grid_pos, c).to(tokens.dtype)

        x = self.proposal_proj(proposal_feats)
        mem = self.bev_proj(tokens)
        words = self.word_proj(word)

        x = self.sa1(x, collect=attn_out)
        x = self.spca(x, kv=mem, collect=attn_out)
        x = self.sa2(x, collect=attn_out)
        x = self.seca(x, kv=words, collect=attn_out)
        return x
