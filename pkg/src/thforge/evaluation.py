"""Classification and segmentation metrics, threshold sweeps, grouped
breakdowns and error-case export.

Conventions, applied consistently and oracle-tested: AUC is the rank
(Mann-Whitney) statistic with ties counted 1/2; average precision processes
tied scores as a single threshold group; Dice of an empty prediction against
an empty ground truth is 1.0; reported std is the population (divide-by-N)
std; zero-denominator rates are 0.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .data.manifest import ImageSample
from .errors import InputError, UndefinedMetricError

CLASS_NAMES = {0: "bona_fide", 1: "attack"}


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0


@dataclass
class ClassReport:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    threshold: float
    confusion: ConfusionCounts
    accuracy: float
    per_class: dict[str, ClassReport]
    macro: ClassReport
    weighted: ClassReport


@dataclass
class SegmentationReport:
    threshold: float
    dice_mean: float
    dice_std: float
    iou_mean: float
    iou_std: float
    n_samples: int


@dataclass
class MetricsReport:
    classification: ClassificationReport
    auc: Optional[float]
    average_precision: Optional[float]
    optimal_threshold: float
    best_f1: float
    segmentation: Optional[SegmentationReport] = None
    per_group: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _rate(num: float, den: float) -> float:
    return num / den if den else 0.0


def confusion_from_scores(scores, labels, threshold: float) -> ConfusionCounts:
    scores, labels = _validate_scores_labels(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        tn=int(np.sum(~pred & ~pos)),
    )


def metrics_from_confusion(counts: ConfusionCounts, threshold: float = 0.5) -> ClassificationReport:
    """Derive accuracy and per-class precision/recall/F1 from raw counts."""
    per_class = {}
    specs = {
        "attack": (counts.tp, counts.fp, counts.fn),
        "bona_fide": (counts.tn, counts.fn, counts.fp),
    }
    supports = {"attack": counts.tp + counts.fn, "bona_fide": counts.tn + counts.fp}
    for name, (hit, false_alarm, miss) in specs.items():
        precision = _rate(hit, hit + false_alarm)
        recall = _rate(hit, hit + miss)
        f1 = _rate(2 * precision * recall, precision + recall)
        per_class[name] = ClassReport(precision, recall, f1, supports[name])

    total = counts.total
    names = ("bona_fide", "attack")
    macro = ClassReport(
        precision=float(np.mean([per_class[n].precision for n in names])),
        recall=float(np.mean([per_class[n].recall for n in names])),
        f1=float(np.mean([per_class[n].f1 for n in names])),
        support=total,
    )
    weighted = ClassReport(
        precision=sum(per_class[n].precision * per_class[n].support for n in names) / total,
        recall=sum(per_class[n].recall * per_class[n].support for n in names) / total,
        f1=sum(per_class[n].f1 * per_class[n].support for n in names) / total,
        support=total,
    )
    return ClassificationReport(threshold, counts, counts.accuracy, per_class, macro, weighted)


def classification_metrics(scores, labels, threshold: float) -> ClassificationReport:
    """Threshold the scores and report exact confusion counts and rates."""
    return metrics_from_confusion(confusion_from_scores(scores, labels, threshold), threshold)


def _validate_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise InputError("empty input")
    if scores.shape != labels.shape:
        raise InputError(f"scores shape {scores.shape} != labels shape {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise InputError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores count one half."""
    scores, labels = _validate_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise AP over descending-score threshold groups (ties grouped)."""
    scores, labels = _validate_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    # Indices where a threshold group (tied scores) ends.
    distinct = np.where(np.diff(sorted_scores))[0]
    ends = np.r_[distinct, sorted_labels.size - 1]

    cum_tp = np.cumsum(sorted_labels)[ends]
    cum_pred = ends + 1
    precision = cum_tp / cum_pred
    recall = cum_tp / n_pos
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def _attack_f1(scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    pred = scores >= threshold
    tp = np.sum(pred & (labels == 1))
    fp = np.sum(pred & (labels == 0))
    fn = np.sum(~pred & (labels == 1))
    return _rate(2 * tp, 2 * tp + fp + fn)


def sweep_threshold(scores, labels, grid_step: float = 0.01) -> tuple[float, float]:
    """Argmax of attack-class F1 over the threshold grid; ties go to the
    higher threshold."""
    scores, labels = _validate_scores_labels(scores, labels)
    n = int(round(1.0 / grid_step))
    best_thr, best_f1 = 0.0, -1.0
    for i in range(n + 1):
        thr = i / n
        f1 = _attack_f1(scores, labels, thr)
        if f1 >= best_f1:
            best_thr, best_f1 = thr, f1
    return best_thr, float(best_f1)


def dice_iou(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Per-sample Dice and IoU of binary masks; empty vs empty is (1, 1)."""
    if pred.shape != gt.shape:
        raise InputError(f"mask shape {pred.shape} != {gt.shape}")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    inter = np.sum(pred & gt)
    p, g = pred.sum(), gt.sum()
    if p + g == 0:
        return 1.0, 1.0
    dice = 2.0 * inter / (p + g)
    union = p + g - inter
    iou = inter / union if union else 1.0
    return float(dice), float(iou)


def segmentation_metrics(pred_masks, gt_masks, threshold: float) -> SegmentationReport:
    """Binarize predictions at ``threshold`` and report Dice/IoU mean and
    population std over the given samples."""
    if len(pred_masks) != len(gt_masks):
        raise InputError("pred/gt mask counts differ")
    if len(pred_masks) == 0:
        raise InputError("empty input")
    dices, ious = [], []
    for pred, gt in zip(pred_masks, gt_masks):
        d, i = dice_iou(np.asarray(pred) >= threshold, np.asarray(gt) > 0.5)
        dices.append(d)
        ious.append(i)
    return SegmentationReport(
        threshold=threshold,
        dice_mean=float(np.mean(dices)),
        dice_std=float(np.std(dices)),
        iou_mean=float(np.mean(ious)),
        iou_std=float(np.std(ious)),
        n_samples=len(dices),
    )


def sweep_seg_threshold(pred_masks, gt_masks, grid_step: float = 0.01) -> tuple[float, float]:
    """Binarization threshold maximizing mean Dice; ties to the higher value."""
    n = int(round(1.0 / grid_step))
    best_thr, best_dice = 0.0, -1.0
    preds = [np.asarray(p) for p in pred_masks]
    gts = [np.asarray(g) > 0.5 for g in gt_masks]
    for i in range(n + 1):
        thr = i / n
        mean_dice = float(np.mean([dice_iou(p >= thr, g)[0] for p, g in zip(preds, gts)]))
        if mean_dice >= best_dice:
            best_thr, best_dice = thr, mean_dice
    return best_thr, best_dice


def build_report(scores, labels, threshold: float | None = None,
                 pred_masks=None, gt_masks=None,
                 seg_threshold: float | None = None) -> MetricsReport:
    """Assemble the full report; sweeps thresholds when not supplied.

    Segmentation metrics are computed over the provided mask pairs, which by
    convention are the attack samples only (an all-empty ground truth would
    score 1.0 under the empty-vs-empty rule and inflate the mean).
    """
    scores, labels = _validate_scores_labels(scores, labels)
    two_class = 0 < labels.sum() < labels.size
    if threshold is None:
        threshold, best_f1 = sweep_threshold(scores, labels) if two_class else (0.5, 0.0)
    else:
        best_f1 = _attack_f1(scores, labels, threshold)
    report = MetricsReport(
        classification=classification_metrics(scores, labels, threshold),
        auc=auc(scores, labels) if two_class else None,
        average_precision=average_precision(scores, labels) if labels.sum() else None,
        optimal_threshold=threshold,
        best_f1=best_f1,
    )
    if pred_masks is not None and len(pred_masks):
        if seg_threshold is None:
            seg_threshold, _ = sweep_seg_threshold(pred_masks, gt_masks)
        report.segmentation = segmentation_metrics(pred_masks, gt_masks, seg_threshold)
    return report


def group_breakdown(samples: list[ImageSample], scores, key: str,
                    threshold: float,
                    pred_masks=None, gt_masks=None,
                    seg_threshold: float | None = None) -> dict[str, MetricsReport]:
    """Per-group reports keyed by sample language or device.

    Rank metrics are None for groups with a single class; segmentation masks
    (aligned with the attack samples in order) are split by the same key.
    """
    if key not in ("language", "device"):
        raise InputError(f"unknown group key {key!r}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray([s.label for s in samples])
    if scores.shape[0] != len(samples):
        raise InputError("scores not aligned with samples")

    attack_indices = [i for i, s in enumerate(samples) if s.label == 1]
    mask_by_index = {}
    if pred_masks is not None:
        if len(pred_masks) != len(attack_indices):
            raise InputError("pred_masks must align with attack samples")
        mask_by_index = {idx: k for k, idx in enumerate(attack_indices)}

    out = {}
    for group in sorted({getattr(s, key) for s in samples}):
        idx = np.array([i for i, s in enumerate(samples) if getattr(s, key) == group])
        g_scores, g_labels = scores[idx], labels[idx]
        g_pred = g_gt = None
        if pred_masks is not None:
            rows = [mask_by_index[i] for i in idx.tolist() if i in mask_by_index]
            if rows:
                g_pred = [pred_masks[r] for r in rows]
                g_gt = [gt_masks[r] for r in rows]
        out[group] = build_report(g_scores, g_labels, threshold=threshold,
                                  pred_masks=g_pred, gt_masks=g_gt,
                                  seg_threshold=seg_threshold)
    return out


def export_errors(samples: list[ImageSample], scores, threshold: float,
                  out_path: str | Path, dice_values: dict[int, float] | None = None) -> Path:
    """Write all false positives/negatives as line-delimited JSON records."""
    scores = np.asarray(scores, dtype=np.float64)
    dice_values = dice_values or {}
    records = []
    for i, sample in enumerate(samples):
        pred = scores[i] >= threshold
        if pred and sample.label == 0:
            kind = "false_positive"
        elif not pred and sample.label == 1:
            kind = "false_negative"
        else:
            continue
        rec = {
            "type": kind,
            "image_path": sample.image_path,
            "score": float(scores[i]),
            "label": sample.label,
            "language": sample.language,
            "device": sample.device,
            "attack_type": sample.attack_type,
        }
        if i in dice_values:
            rec["dice"] = dice_values[i]
        records.append(rec)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return out_path
