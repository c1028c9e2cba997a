"""Trimodal BEV encoder: point/image fusion, sentence broadcast, FPN."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from bevground.model.encoders import _norm


class TrimodalEncoder(nn.Module):
    """Fuse point and image grids, condition on the sentence vector, then run
    a three-level pyramid for global context. Output keeps input resolution.

    In lidar-only mode the fused visual grid is exactly the point grid; the
    image path contributes nothing.
    """

    def __init__(self, channels: int, d_text: int, image_channels: int = 0):
        super().__init__()
        self.channels = channels
        self.image_channels = 0
        self.visual_fuse = None
        self.text_reduce = nn.Conv2d(channels + d_text, channels, 1)

        def down():
            return nn.Sequential(
                nn.Conv2d(channels, channels, 3, stride=2, padding=1),
                _norm(channels),
                nn.ReLU(inplace=True),
            )

        self.down1 = down()
        self.down2 = down()
        self.lateral0 = nn.Conv2d(channels, channels, 1)
        self.lateral1 = nn.Conv2d(channels, channels, 1)
        self.lateral2 = nn.Conv2d(channels, channels, 1)
        self.smooth = nn.Conv2d(channels, channels, 3, padding=1)
        if image_channels > 0:
            self.enable_image_path(image_channels)

    def enable_image_path(self, image_channels: int) -> None:
        """Create the point/image fusion conv; kept separate so image-branch
        parameters can be initialized from an isolated RNG stream.

        Initialized as an identity over the point channels with zeroed image
        columns: the instant the branch switches on, the fused grid still
        equals the point grid, and image evidence blends in only as training
        moves the zero columns. Stage-2 fine-tuning therefore starts from
        exactly the stage-1 model instead of a scrambled fusion.
        """
        self.image_channels = image_channels
        self.visual_fuse = nn.Conv2d(self.channels + image_channels, self.channels, 1)
        with torch.no_grad():
            self.visual_fuse.weight.zero_()
            self.visual_fuse.bias.zero_()
            for c in range(self.channels):
                self.visual_fuse.weight[c, c, 0, 0] = 1.0

    def forward(self, point_grid: torch.Tensor, image_grid: torch.Tensor | None,
                sentence: torch.Tensor) -> torch.Tensor:
        """(1, C, H, W), optional (1, C_img, H, W), (d_text,) -> (1, C, H, W)."""
        if image_grid is None:
            fused = point_grid
        else:
            if self.visual_fuse is None:
                raise ValueError("model was built without an image branch")
            if image_grid.shape[-2:] != point_grid.shape[-2:]:
                raise ValueError(
                    f"spatial mismatch: points {tuple(point_grid.shape[-2:])} vs images {tuple(image_grid.shape[-2:])}"
                )
            fused = self.visual_fuse(torch.cat([point_grid, image_grid], dim=1))

        h, w = fused.shape[-2:]
        tiled = sentence.to(fused.dtype).view(1, -1, 1, 1).expand(1, sentence.shape[0], h, w)
        x0 = self.text_reduce(torch.cat([fused, tiled], dim=1))

        d1 = self.down1(x0)
        d2 = self.down2(d1)
        p2 = self.lateral2(d2)
        p1 = self.lateral1(d1) + F.interpolate(p2, size=d1.shape[-2:], mode="nearest")
        p0 = self.lateral0(x0) + F.interpolate(p1, size=x0.shape[-2:], mode="nearest")
        return self.smooth(p0)
