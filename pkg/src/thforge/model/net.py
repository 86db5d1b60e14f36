"""The dual-head network: image-level manipulation score + pixel-level mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig
from .backbone import FeaturePyramid, SwinBackbone
from .decoder import Decoder
from .fpn import FeaturePyramidFusion


@dataclass
class PredictionPair:
    """Image-level probability plus pixel-level probability map.

    ``aux_mask`` is the lower-resolution deep-supervision map, emitted in
    training mode only. Either head may be absent under single-task configs.
    """

    score: Optional[torch.Tensor]      # (B,)
    mask: Optional[torch.Tensor]       # (B, 1, S, S)
    aux_mask: Optional[torch.Tensor]   # (B, 1, S/8, S/8), training only


class DualHeadNet(nn.Module):
    """Windowed-attention backbone -> FPN -> CBAM decoder -> two task heads.

    The detection head reads the coarsest backbone level directly; the
    segmentation head reads the decoder output on the fused pyramid. Weights
    are immutable during evaluation-mode inference, so concurrent forward
    passes are safe; training is single-writer.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.backbone = SwinBackbone(config)
        if config.has_det_head:
            self.det_conv = nn.Conv2d(config.stage_dims[3], 1, kernel_size=1)
            self.det_dropout = nn.Dropout(config.dropout_rate)
        if config.has_seg_head:
            self.fpn = FeaturePyramidFusion(config)
            self.decoder = Decoder(config)
            self.seg_conv = nn.Conv2d(config.fpn_channels, 1, kernel_size=1)
            self.aux_conv = nn.Conv2d(config.fpn_channels, 1, kernel_size=1)

    def backbone_forward(self, image_batch: torch.Tensor) -> FeaturePyramid:
        return self.backbone(image_batch)

    def forward(self, image_batch: torch.Tensor) -> PredictionPair:
        pyramid = self.backbone(image_batch)

        score = None
        if self.config.has_det_head:
            z = self.det_dropout(self.det_conv(pyramid.levels[3]))
            score = torch.sigmoid(z.mean(dim=(2, 3)).squeeze(1))

        mask = aux = None
        if self.config.has_seg_head:
            fused = self.fpn(pyramid)
            final, mid = self.decoder(fused)
            logits = self.seg_conv(final)
            logits = F.interpolate(logits, scale_factor=4, mode="bilinear",
                                   align_corners=False)
            mask = torch.sigmoid(logits)
            if self.training:
                aux = torch.sigmoid(self.aux_conv(mid))

        return PredictionPair(score=score, mask=mask, aux_mask=aux)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
