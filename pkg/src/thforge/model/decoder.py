"""Coarse-to-fine decoder over the fused pyramid.

Starting from the coarsest level, each step bilinearly upsamples by 2,
concatenates the matching skip level and applies conv -> batch norm -> ReLU,
optionally followed by CBAM gating. The final map sits at the finest pyramid
resolution (input_size / 4); the intermediate state one step earlier
(input_size / 8) is exposed for deep supervision.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig
from .backbone import FeaturePyramid
from .cbam import CBAM


class DecoderBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int,
                 use_cbam: bool, reduction: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)
        self.bn = nn.BatchNorm2d(out_channels)
        self.cbam = CBAM(out_channels, reduction) if use_cbam else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.bn(self.conv(x)), inplace=True)
        return self.cbam(x)


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.fpn_channels
        self.blocks = nn.ModuleList([
            DecoderBlock(2 * c, c, config.use_cbam, config.cbam_reduction)
            for _ in range(3)
        ])

    def forward(self, pyramid: FeaturePyramid) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (final map at S/4, intermediate state at S/8)."""
        p0, p1, p2, p3 = pyramid.levels
        x = p3
        mid = None
        for block, skip in zip(self.blocks, (p2, p1, p0)):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = block(torch.cat([x, skip], dim=1))
            if x.shape[-1] == p1.shape[-1]:
                mid = x
        return x, mid
