"""Training objective: focal detection loss, composite segmentation loss and
the uncertainty-weighted two-task total.

All functions are pure in their tensor inputs and differentiable, and accept
soft targets in [0, 1] so they compose with MixUp.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import LossConfig
from .errors import InputError

_EPS = 1e-7


def focal_loss(scores: torch.Tensor, labels: torch.Tensor,
               cfg: LossConfig | None = None) -> torch.Tensor:
    """Mean focal loss over the batch.

    For hard labels this is mean(-alpha * (1 - p_t)^gamma * log(p_t)) with
    p_t = p for label 1 and 1-p for label 0; alpha is applied symmetrically
    to both classes. Soft labels in (0, 1) mix the two class terms.
    """
    cfg = cfg or LossConfig()
    if scores.shape != labels.shape:
        raise InputError(f"scores shape {tuple(scores.shape)} != labels {tuple(labels.shape)}")
    labels = labels.to(scores.dtype)
    if torch.any(labels < 0) or torch.any(labels > 1):
        raise InputError("labels must lie in [0, 1]")

    p = scores.clamp(_EPS, 1.0 - _EPS)
    pos = (1.0 - p) ** cfg.focal_gamma * torch.log(p)
    neg = p ** cfg.focal_gamma * torch.log(1.0 - p)
    return -(cfg.focal_alpha * (labels * pos + (1.0 - labels) * neg)).mean()


def dice_loss(pred: torch.Tensor, target: torch.Tensor,
              cfg: LossConfig | None = None) -> torch.Tensor:
    """1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), summed over the batch."""
    cfg = cfg or LossConfig()
    if pred.shape != target.shape:
        raise InputError(f"pred shape {tuple(pred.shape)} != target {tuple(target.shape)}")
    target = target.to(pred.dtype)
    inter = (pred * target).sum()
    eps = cfg.dice_epsilon
    return 1.0 - (2.0 * inter + eps) / (pred.sum() + target.sum() + eps)


def boundary_band(target: torch.Tensor, band_px: int) -> torch.Tensor:
    """Boolean band where dilation and erosion of the binarized target differ."""
    hard = (target > 0.5).to(target.dtype)
    k = 2 * band_px + 1
    dilated = F.max_pool2d(hard, kernel_size=k, stride=1, padding=band_px)
    eroded = -F.max_pool2d(-hard, kernel_size=k, stride=1, padding=band_px)
    return dilated != eroded


def boundary_loss(pred: torch.Tensor, target: torch.Tensor,
                  cfg: LossConfig | None = None) -> torch.Tensor:
    """Binary cross-entropy restricted to the mask boundary band; 0 if no band."""
    cfg = cfg or LossConfig()
    if pred.shape != target.shape:
        raise InputError(f"pred shape {tuple(pred.shape)} != target {tuple(target.shape)}")
    band = boundary_band(target.to(pred.dtype), cfg.boundary_band_px)
    if not band.any():
        return pred.sum() * 0.0
    p = pred[band].clamp(_EPS, 1.0 - _EPS)
    g = target.to(pred.dtype)[band]
    return -(g * torch.log(p) + (1.0 - g) * torch.log(1.0 - p)).mean()


def downsample_mask(target: torch.Tensor, side: int) -> torch.Tensor:
    """Max-pool a (B,1,H,W) mask down to spatial side ``side``."""
    factor = target.shape[-1] // side
    if factor * side != target.shape[-1]:
        raise InputError(f"target side {target.shape[-1]} not divisible to {side}")
    if factor == 1:
        return target
    return F.max_pool2d(target, kernel_size=factor, stride=factor)


def segmentation_loss(pred: torch.Tensor, aux_pred: torch.Tensor | None,
                      target: torch.Tensor, cfg: LossConfig | None = None) -> torch.Tensor:
    """w_main * Dice + w_aux * Dice(aux vs max-pooled target) + w_bound * boundary BCE."""
    cfg = cfg or LossConfig()
    total = cfg.w_main * dice_loss(pred, target, cfg)
    if aux_pred is not None and cfg.w_aux > 0:
        target_lo = downsample_mask(target.to(pred.dtype), aux_pred.shape[-1])
        total = total + cfg.w_aux * dice_loss(aux_pred, target_lo, cfg)
    if cfg.w_bound > 0:
        total = total + cfg.w_bound * boundary_loss(pred, target, cfg)
    return total


def uncertainty_total(l_det, l_seg, s_det, s_seg) -> torch.Tensor:
    """Two-task total with learnable log-variances s = log(sigma^2).

    0.5*exp(-s_det)*l_det + 0.5*s_det + 0.5*exp(-s_seg)*l_seg + 0.5*s_seg,
    which equals L/(2 sigma^2) + log(sigma) per task.
    """
    l_det, l_seg, s_det, s_seg = (
        x if torch.is_tensor(x) else torch.as_tensor(float(x), dtype=torch.float64)
        for x in (l_det, l_seg, s_det, s_seg))
    return (0.5 * torch.exp(-s_det) * l_det + 0.5 * s_det
            + 0.5 * torch.exp(-s_seg) * l_seg + 0.5 * s_seg)


class UncertaintyWeighting(nn.Module):
    """Holds the two log-variance parameters and combines task losses."""

    def __init__(self, cfg: LossConfig | None = None):
        super().__init__()
        cfg = cfg or LossConfig()
        self.s_det = nn.Parameter(torch.tensor(float(cfg.init_log_var_det)))
        self.s_seg = nn.Parameter(torch.tensor(float(cfg.init_log_var_seg)))

    def forward(self, l_det: torch.Tensor, l_seg: torch.Tensor) -> torch.Tensor:
        return uncertainty_total(l_det, l_seg, self.s_det, self.s_seg)

    @property
    def sigma_det(self) -> float:
        return float(torch.exp(0.5 * self.s_det.detach()))

    @property
    def sigma_seg(self) -> float:
        return float(torch.exp(0.5 * self.s_seg.detach()))
