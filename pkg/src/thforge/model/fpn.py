"""Top-down feature pyramid fusion to a single channel width."""

from __future__ import annotations

import torch.nn as nn
import torch.nn.functional as F

from ..config import ConfigurationError, ModelConfig
from .backbone import FeaturePyramid


class FeaturePyramidFusion(nn.Module):
    """Unifies a 4-level backbone pyramid to ``fpn_channels`` at every level.

    With ``use_fpn`` enabled, each level is a lateral 1x1 projection merged
    with the nearest-upsampled coarser level and smoothed by a 3x3 conv. With
    it disabled (ablation), outputs are the bare lateral projections.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        out = config.fpn_channels
        self.laterals = nn.ModuleList(
            [nn.Conv2d(c, out, kernel_size=1) for c in config.stage_dims])
        if config.use_fpn:
            self.smooths = nn.ModuleList(
                [nn.Conv2d(out, out, kernel_size=3, padding=1) for _ in range(4)])

    def forward(self, features: FeaturePyramid) -> FeaturePyramid:
        if features.channels != list(self.config.stage_dims):
            raise ConfigurationError(
                f"pyramid channels {features.channels} do not match "
                f"stage_dims {self.config.stage_dims}")

        laterals = [lat(f) for lat, f in zip(self.laterals, features.levels)]
        if not self.config.use_fpn:
            return FeaturePyramid(laterals)

        merged = [None] * 4
        merged[3] = laterals[3]
        for i in (2, 1, 0):
            up = F.interpolate(merged[i + 1], scale_factor=2, mode="nearest")
            merged[i] = laterals[i] + up
        return FeaturePyramid([self.smooths[i](merged[i]) for i in range(4)])
