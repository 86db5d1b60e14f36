"""The training objective piece by piece.

Detection uses focal loss; segmentation combines Dice, a deep-supervision
Dice at 1/8 resolution, and boundary-band BCE; the two tasks are balanced by
learnable log-variances.
"""
import math

import torch

from thforge.config import LossConfig
from thforge.losses import (boundary_loss, dice_loss, focal_loss,
                            segmentation_loss, uncertainty_total)

cfg = LossConfig()

# Focal loss: confident correct predictions cost almost nothing, confident
# mistakes dominate the batch.
scores = torch.tensor([0.95, 0.5, 0.05])
labels = torch.tensor([1.0, 1.0, 1.0])
for s, l in zip(scores, labels):
    print(f"focal(score={s:.2f}, label={int(l)}) = "
          f"{float(focal_loss(s[None], l[None], cfg)):.5f}")
print(f"  (0.5 case is alpha*0.25*ln2 = {0.25 * 0.25 * math.log(2):.5f})")

# Dice loss: overlap ratio, smoothed so empty-vs-empty is a perfect score.
pred = torch.zeros(1, 1, 8, 8)
target = torch.zeros(1, 1, 8, 8)
pred[0, 0, 2:6, 2:6] = 1.0
target[0, 0, 4:8, 2:6] = 1.0  # half of pred overlaps
print(f"dice_loss(half overlap) = {float(dice_loss(pred, target, cfg)):.4f}")
print(f"dice_loss(empty, empty) = {float(dice_loss(torch.zeros(1,1,8,8), torch.zeros(1,1,8,8), cfg)):.4f}")

# Boundary loss only scores the ring where dilation and erosion differ.
print(f"boundary_loss(pred==target) = {float(boundary_loss(target, target, cfg)):.6f}")

# The composite segmentation loss and the uncertainty-weighted total.
aux = torch.nn.functional.max_pool2d(target, 2)
seg = segmentation_loss(pred, aux, target, cfg)
det = focal_loss(torch.tensor([0.3]), torch.tensor([1.0]), cfg)
print(f"L_det = {float(det):.4f}, L_seg = {float(seg):.4f}")

for s_det, s_seg in ((0.0, 0.0), (1.0, -1.0)):
    total = uncertainty_total(det, seg, torch.tensor(s_det), torch.tensor(s_seg))
    print(f"total with log-variances ({s_det:+.1f}, {s_seg:+.1f}) = {float(total):.4f}")
print("(with s = 0 the total is exactly half the sum of the task losses)")
