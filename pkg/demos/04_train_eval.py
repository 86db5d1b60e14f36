"""Mini end-to-end run: synthesize data, train the desk model briefly,
evaluate with grouped breakdowns.

A real desk run uses 20+ epochs (see the acceptance suite); this demo keeps
it to a few epochs so it finishes in under a minute.
"""
import tempfile
from pathlib import Path

import numpy as np
import torch

from thforge import DualHeadNet, LossConfig, TrainConfig, desk_model_config
from thforge.cli import split_samples
from thforge.data import generate_synthetic_dataset, load_manifest
from thforge.evaluation import build_report, group_breakdown
from thforge.training import predict_samples, train

work = Path(tempfile.mkdtemp(prefix="thforge_demo_"))
manifest = generate_synthetic_dataset(work / "data", n_per_cell=1, rng_seed=0)
samples = load_manifest(manifest)
train_set, val_set = split_samples(samples, val_fraction=0.2, seed=0)
print(f"{len(train_set)} train / {len(val_set)} val samples")

torch.manual_seed(0)
model = DualHeadNet(desk_model_config())
cfg = TrainConfig(epochs=4, freeze_epochs=1, batch_size=8, seed=0, base_lr=3e-3)
result = train(model, train_set, LossConfig(), cfg, aug_cfg=None,
               val_samples=val_set, out_dir=work / "run")
print("epoch losses:", [round(r["train_loss"], 3) for r in result.history])
print("uncertainty sigmas:",
      round(result.history[-1]["sigma_det"], 3),
      round(result.history[-1]["sigma_seg"], 3))

scores, pred_masks, gt_masks = predict_samples(model, val_set)
labels = np.array([s.label for s in val_set])
attack_rows = [i for i, s in enumerate(val_set) if s.label == 1]
report = build_report(scores, labels,
                      pred_masks=pred_masks[attack_rows],
                      gt_masks=gt_masks[attack_rows])
print(f"val accuracy {report.classification.accuracy:.3f} "
      f"at threshold {report.optimal_threshold:.2f}")
print(f"val dice {report.segmentation.dice_mean:.3f}")

by_device = group_breakdown(val_set, scores, "device", report.optimal_threshold)
for device, sub in by_device.items():
    print(f"  {device}: acc {sub.classification.accuracy:.3f} "
          f"over {sub.classification.confusion.total} samples")
