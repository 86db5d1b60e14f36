"""Two-phase training: frozen-backbone warmup then end-to-end fine-tuning,
with per-group learning rates, linear-warmup cosine annealing, global-norm
gradient clipping and uncertainty-weighted task balancing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .config import AugmentConfig, ConfigurationError, LossConfig, TrainConfig
from .data.augment import augment, mixup
from .data.manifest import ImageSample
from .data.preprocess import load_image, load_mask, preprocess, preprocess_mask
from .losses import UncertaintyWeighting, focal_loss, segmentation_loss
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.net import DualHeadNet


class TrainingAbort(RuntimeError):
    """Raised when the loss becomes non-finite; carries last lr and grad norm."""


def build_param_groups(model: DualHeadNet, cfg: TrainConfig,
                       uncertainty: UncertaintyWeighting | None = None) -> list[dict]:
    """Partition parameters into optimizer groups with their learning rates.

    Groups: backbone+FPN+decoder trunk, detection head, segmentation heads,
    and one group per uncertainty parameter (weight decay 0 there, since
    decaying a log-variance just biases sigma toward 1).
    """
    base, det, seg = [], [], []
    for name, param in model.named_parameters():
        if name.startswith("det_conv"):
            det.append(param)
        elif name.startswith(("seg_conv", "aux_conv")):
            seg.append(param)
        elif name.startswith(("backbone", "fpn", "decoder")):
            base.append(param)
        else:
            raise ConfigurationError(f"parameter {name} not covered by any group")

    groups = []
    if base:
        groups.append({"name": "base", "params": base,
                       "lr": cfg.base_lr * cfg.lr_mult_backbone_and_base,
                       "weight_decay": cfg.weight_decay})
    if det:
        groups.append({"name": "det_head", "params": det,
                       "lr": cfg.base_lr * cfg.lr_mult_cls_head,
                       "weight_decay": cfg.weight_decay})
    if seg:
        groups.append({"name": "seg_head", "params": seg,
                       "lr": cfg.base_lr * cfg.lr_mult_seg,
                       "weight_decay": cfg.weight_decay})
    if uncertainty is not None:
        groups.append({"name": "uncertainty_det", "params": [uncertainty.s_det],
                       "lr": cfg.lr_uncertainty_det, "weight_decay": 0.0})
        groups.append({"name": "uncertainty_seg", "params": [uncertainty.s_seg],
                       "lr": cfg.lr_uncertainty_seg, "weight_decay": 0.0})
    return groups


def lr_schedule(step: int, total_steps: int, warmup_steps: int,
                group_base_lr: float, cfg: TrainConfig) -> float:
    """Linear warmup from 0, then cosine decay from the group lr to eta_min."""
    if step < 0 or step > total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step <= warmup_steps:
        return group_base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return cfg.eta_min + 0.5 * (group_base_lr - cfg.eta_min) * (1.0 + math.cos(math.pi * progress))


class SampleDataset:
    """Decodes and caches manifest samples; serves augmented model tensors."""

    def __init__(self, samples: list[ImageSample], input_size: int,
                 aug_cfg: AugmentConfig | None = None):
        self.samples = samples
        self.input_size = input_size
        self.aug_cfg = aug_cfg
        self._cache: dict[int, tuple[np.ndarray, np.ndarray | None]] = {}

    def __len__(self) -> int:
        return len(self.samples)

    def _decoded(self, idx: int) -> tuple[np.ndarray, np.ndarray | None]:
        if idx not in self._cache:
            s = self.samples[idx]
            image = load_image(s.image_path)
            mask = load_mask(s.mask_path) if s.mask_path else None
            self._cache[idx] = (image, mask)
        return self._cache[idx]

    def get(self, idx: int, aug_seed=None) -> tuple[torch.Tensor, int, torch.Tensor]:
        image, mask = self._decoded(idx)
        if self.aug_cfg is not None and aug_seed is not None:
            image, mask = augment(image, mask, self.aug_cfg, aug_seed)
        x = preprocess(image, self.input_size)
        if mask is not None:
            m = preprocess_mask(mask, self.input_size)
        else:
            m = torch.zeros(1, self.input_size, self.input_size)
        return x, self.samples[idx].label, m

    def batch(self, indices, epoch: int, base_seed: int | None):
        xs, ys, ms = [], [], []
        for idx in indices:
            seed = None
            if base_seed is not None:
                seed = np.random.SeedSequence([base_seed, epoch, int(idx)])
            x, y, m = self.get(int(idx), seed)
            xs.append(x)
            ys.append(y)
            ms.append(m)
        return torch.stack(xs), torch.tensor(ys, dtype=torch.float32), torch.stack(ms)


@dataclass
class TrainResult:
    history: list[dict]
    last_checkpoint: Path
    best_checkpoint: Optional[Path]
    best_val_f1: Optional[float]


def _set_backbone_frozen(model: DualHeadNet, frozen: bool) -> None:
    for p in model.backbone.parameters():
        p.requires_grad_(not frozen)


def _global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


def predict_samples(model: DualHeadNet, samples: list[ImageSample],
                    batch_size: int = 8):
    """Evaluation-mode inference over a sample list.

    Returns (scores, pred_masks, gt_masks): scores is an (N,) array or None,
    masks are (N, S, S) probability/binary arrays or None for detection-only
    models.
    """
    dataset = SampleDataset(samples, model.config.input_size)
    model.eval()
    scores, preds, gts = [], [], []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            idx = range(start, min(start + batch_size, len(samples)))
            x, _, m = dataset.batch(idx, epoch=0, base_seed=None)
            out = model(x)
            if out.score is not None:
                scores.append(out.score.numpy())
            if out.mask is not None:
                preds.append(out.mask.squeeze(1).numpy())
                gts.append(m.squeeze(1).numpy())
    score_arr = np.concatenate(scores) if scores else None
    pred_arr = np.concatenate(preds) if preds else None
    gt_arr = np.concatenate(gts) if gts else None
    return score_arr, pred_arr, gt_arr


def train(model: DualHeadNet,
          train_samples: list[ImageSample],
          loss_cfg: LossConfig,
          train_cfg: TrainConfig,
          aug_cfg: AugmentConfig | None = None,
          val_samples: list[ImageSample] | None = None,
          out_dir: str | Path = "runs/default",
          on_step: Callable[[dict], None] | None = None,
          on_epoch: Callable[[dict], None] | None = None,
          resume: bool = False) -> TrainResult:
    """Run the two-phase loop and write history + checkpoints under out_dir.

    Epochs 1..freeze_epochs train with backbone gradients disabled; later
    epochs train end to end. Each step: forward -> uncertainty-weighted total
    -> backward -> global-norm clip -> AdamW step at the scheduled lr.
    Deterministic given train_cfg.seed, including across resume.
    """
    from .evaluation import sweep_threshold  # local import to avoid cycle

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.jsonl"
    state_path = out_dir / "train_state.pt"
    cfgm = model.config

    uncertainty = UncertaintyWeighting(loss_cfg) if cfgm.multitask else None
    groups = build_param_groups(model, train_cfg, uncertainty)
    optimizer = torch.optim.AdamW(groups)
    group_base_lrs = [g["lr"] for g in optimizer.param_groups]

    dataset = SampleDataset(train_samples, cfgm.input_size, aug_cfg)
    steps_per_epoch = max(1, math.ceil(len(train_samples) / train_cfg.batch_size))
    total_steps = train_cfg.epochs * steps_per_epoch
    warmup_steps = train_cfg.freeze_epochs * steps_per_epoch

    history: list[dict] = []
    start_epoch = 1
    best_f1: float | None = None
    if resume and state_path.exists():
        state = torch.load(state_path, weights_only=False)
        optimizer.load_state_dict(state["optimizer"])
        if uncertainty is not None:
            uncertainty.load_state_dict(state["uncertainty"])
        start_epoch = state["epoch"] + 1
        best_f1 = state["best_val_f1"]
        resumed, _ = load_checkpoint(out_dir / "last.ckpt")
        model.load_state_dict(resumed.state_dict())
        history = [json.loads(l) for l in history_path.read_text().splitlines() if l.strip()]
    else:
        history_path.write_text("")

    last_path = out_dir / "last.ckpt"
    best_path = out_dir / "best.ckpt"
    use_mixup = (aug_cfg is not None and train_cfg.use_mixup
                 and aug_cfg.mixup_prob > 0)

    for epoch in range(start_epoch, train_cfg.epochs + 1):
        frozen = epoch <= train_cfg.freeze_epochs
        _set_backbone_frozen(model, frozen)
        model.train()

        order_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, epoch]))
        order = order_rng.permutation(len(train_samples))
        epoch_losses = []
        max_post_clip = 0.0

        for b in range(steps_per_epoch):
            global_step = (epoch - 1) * steps_per_epoch + b
            # Per-step torch seed keeps dropout/mixup reproducible across resume.
            torch.manual_seed(train_cfg.seed * 1_000_003 + global_step)
            indices = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            if len(indices) == 0:
                continue
            x, y, m = dataset.batch(indices, epoch, train_cfg.seed)

            if use_mixup:
                mix_rng = np.random.default_rng(
                    np.random.SeedSequence([train_cfg.seed, epoch, b, 7]))
                x, y, m = mixup(x, y, m, x.flip(0), y.flip(0), m.flip(0),
                                aug_cfg, mix_rng)

            out = model(x)
            l_det = focal_loss(out.score, y, loss_cfg) if out.score is not None else None
            l_seg = (segmentation_loss(out.mask, out.aux_mask, m, loss_cfg)
                     if out.mask is not None else None)
            if uncertainty is not None:
                total = uncertainty(l_det, l_seg)
            else:
                total = l_det if l_det is not None else l_seg

            optimizer.zero_grad(set_to_none=True)
            total.backward()
            all_params = [p for g in optimizer.param_groups for p in g["params"]]
            torch.nn.utils.clip_grad_norm_(all_params, train_cfg.grad_clip_norm)
            post_clip = _global_grad_norm(all_params)
            max_post_clip = max(max_post_clip, post_clip)

            lrs = []
            for group, base in zip(optimizer.param_groups, group_base_lrs):
                group["lr"] = lr_schedule(min(global_step + 1, total_steps),
                                          total_steps, warmup_steps, base, train_cfg)
                lrs.append(group["lr"])
            if not torch.isfinite(total):
                raise TrainingAbort(
                    f"non-finite loss at epoch {epoch} step {b}: "
                    f"last_lrs={lrs}, post_clip_grad_norm={post_clip:.4g}")
            optimizer.step()
            epoch_losses.append(float(total.detach()))
            if on_step is not None:
                on_step({"epoch": epoch, "step": b, "global_step": global_step,
                         "loss": float(total.detach()), "grad_norm_post_clip": post_clip,
                         "lrs": lrs})

        record = {
            "epoch": epoch,
            "frozen_backbone": frozen,
            "train_loss": float(np.mean(epoch_losses)),
            "lr_per_group": {g["name"]: g["lr"] for g in optimizer.param_groups},
            "grad_norm_post_clip_max": max_post_clip,
        }
        if uncertainty is not None:
            record["sigma_det"] = uncertainty.sigma_det
            record["sigma_seg"] = uncertainty.sigma_seg

        if val_samples:
            scores, preds, gts = predict_samples(model, val_samples, train_cfg.batch_size)
            if scores is not None:
                val_labels = np.array([s.label for s in val_samples])
                thr, f1 = sweep_threshold(scores, val_labels)
                record["val_f1"] = f1
                record["val_threshold"] = thr
                if best_f1 is None or f1 >= best_f1:
                    best_f1 = f1
                    save_checkpoint(model, best_path, extra={"val_f1": f1, "epoch": epoch})
            model.train()

        history.append(record)
        with history_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

        save_checkpoint(model, last_path, extra={"epoch": epoch})
        torch.save({
            "optimizer": optimizer.state_dict(),
            "uncertainty": uncertainty.state_dict() if uncertainty else None,
            "epoch": epoch,
            "best_val_f1": best_f1,
        }, state_path)
        # Fires after the epoch is fully persisted, so an abort here resumes
        # cleanly from this epoch.
        if on_epoch is not None:
            on_epoch(record)

    model.eval()
    return TrainResult(
        history=history,
        last_checkpoint=last_path,
        best_checkpoint=best_path if best_path.exists() else None,
        best_val_f1=best_f1,
    )
