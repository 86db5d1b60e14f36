"""Operator entry points: synth, train, eval, serve.

Exit codes: 0 ok, 1 environment error, 2 input error. Config fields can be
overridden with ``--set section.field=value`` dot paths or environment
variables prefixed THFORGE_ (e.g. THFORGE_TRAIN_EPOCHS=10).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import (AugmentConfig, ConfigurationError, LossConfig,
                     MODEL_PROFILES, ModelConfig, ServiceConfig, TrainConfig,
                     apply_env_overrides, config_to_dict, no_augment_config,
                     set_by_path)
from .errors import InputError
from .evaluation import (build_report, dice_iou, export_errors,
                         group_breakdown, sweep_threshold)
from .model.checkpoint import CheckpointError, load_checkpoint
from .model.net import DualHeadNet

EXIT_OK, EXIT_ENV, EXIT_INPUT = 0, 1, 2


@dataclass
class RunConfig:
    """All tunable sections addressable by --set dot paths."""
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)


def _apply_overrides(cfg: RunConfig, sets: list[str]) -> None:
    for section in ("model", "loss", "train", "aug", "service"):
        apply_env_overrides(getattr(cfg, section), section)
    for item in sets or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        path, raw = item.split("=", 1)
        set_by_path(cfg, path.strip(), raw.strip())


def _content_hash(*paths: Path) -> str:
    h = hashlib.sha256()
    for p in paths:
        if p and Path(p).exists():
            h.update(Path(p).read_bytes())
    return h.hexdigest()


def write_run_manifest(out_dir: Path, command: str, config: dict, seed: int | None,
                       input_hash: str, started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "input_hash": input_hash,
        "started_at": started,
        "finished_at": time.time(),
    }
    path = Path(out_dir) / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def cmd_synth(args) -> int:
    from .data.manifest import load_manifest, manifest_counts
    from .data.synthetic import generate_synthetic_dataset

    started = time.time()
    out_dir = Path(args.out)
    try:
        manifest_path = generate_synthetic_dataset(out_dir, args.n, args.seed)
    except OSError as exc:
        print(f"error: cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_ENV
    counts = manifest_counts(load_manifest(manifest_path))
    write_run_manifest(out_dir, "synth", {"n_per_cell": args.n}, args.seed,
                       _content_hash(manifest_path), started)
    print(f"manifest: {manifest_path}")
    print(f"samples: {counts['total']} "
          f"(bona_fide={counts['by_label'].get(0, 0)}, attack={counts['by_label'].get(1, 0)})")
    return EXIT_OK


def split_samples(samples, val_fraction: float, seed: int):
    """Stratified-by-label train/val split, deterministic in the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 91]))
    train_set, val_set = [], []
    for label in (0, 1):
        idx = [i for i, s in enumerate(samples) if s.label == label]
        rng.shuffle(idx)
        n_val = int(round(len(idx) * val_fraction))
        val_set.extend(idx[:n_val])
        train_set.extend(idx[n_val:])
    return [samples[i] for i in sorted(train_set)], [samples[i] for i in sorted(val_set)]


def cmd_train(args) -> int:
    from .data.manifest import load_manifest
    from .training import train

    started = time.time()
    cfg = RunConfig(model=MODEL_PROFILES[args.profile]())
    cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.freeze_epochs is not None:
        cfg.train.freeze_epochs = args.freeze_epochs
    if args.batch_size is not None:
        cfg.train.batch_size = args.batch_size
    if args.no_cbam:
        cfg.model.use_cbam = False
    if args.no_fpn:
        cfg.model.use_fpn = False
    if args.single_task:
        cfg.model.multitask = False
        cfg.model.single_task = args.single_task
    _apply_overrides(cfg, args.set)

    samples = load_manifest(args.manifest)
    train_samples, val_samples = split_samples(samples, cfg.train.val_fraction,
                                               cfg.train.seed)
    if not val_samples:
        train_samples, val_samples = samples, None

    import torch
    torch.manual_seed(cfg.train.seed)
    model = DualHeadNet(cfg.model)
    aug_cfg = None if args.no_augment else cfg.aug
    if args.no_mixup:
        cfg.train.use_mixup = False

    out_dir = Path(args.out)
    result = train(model, train_samples, cfg.loss, cfg.train, aug_cfg,
                   val_samples=val_samples, out_dir=out_dir)
    write_run_manifest(
        out_dir, "train",
        {k: config_to_dict(getattr(cfg, k)) for k in ("model", "loss", "train", "aug")},
        cfg.train.seed, _content_hash(Path(args.manifest)), started)
    print(f"checkpoint: {result.last_checkpoint}")
    if result.best_checkpoint:
        print(f"best checkpoint: {result.best_checkpoint} (val F1 {result.best_val_f1:.4f})")
    print(f"history: {out_dir / 'history.jsonl'}")
    return EXIT_OK


def _dump_points(scores, labels, out_dir: Path) -> None:
    """ROC and PR point files for external plotting."""
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    n_pos, n_neg = int(y.sum()), int((1 - y).sum())
    tp = fp = 0
    roc, pr = [], []
    for i in range(len(s)):
        tp += int(y[i] == 1)
        fp += int(y[i] == 0)
        if i + 1 < len(s) and s[i + 1] == s[i]:
            continue
        roc.append({"threshold": float(s[i]),
                    "fpr": fp / n_neg if n_neg else 0.0,
                    "tpr": tp / n_pos if n_pos else 0.0})
        pr.append({"threshold": float(s[i]),
                   "recall": tp / n_pos if n_pos else 0.0,
                   "precision": tp / (tp + fp)})
    for name, rows in (("roc_points.jsonl", roc), ("pr_points.jsonl", pr)):
        with (out_dir / name).open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")


def cmd_eval(args) -> int:
    from .data.manifest import load_manifest
    from .training import predict_samples

    started = time.time()
    samples = load_manifest(args.manifest)
    model, _ = load_checkpoint(args.checkpoint)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores, pred_masks, gt_masks = predict_samples(model, samples)
    labels = np.array([s.label for s in samples])

    attack_rows = [i for i, s in enumerate(samples) if s.label == 1]
    attack_pred = attack_gt = None
    if pred_masks is not None and attack_rows:
        attack_pred = pred_masks[attack_rows]
        attack_gt = gt_masks[attack_rows]

    payload = {}
    threshold = args.threshold
    if scores is not None:
        report = build_report(scores, labels, threshold=threshold,
                              pred_masks=attack_pred, gt_masks=attack_gt,
                              seg_threshold=args.seg_threshold)
        threshold = report.optimal_threshold
        seg_thr = report.segmentation.threshold if report.segmentation else None
        report.per_group = {
            key: {g: r.to_dict() for g, r in group_breakdown(
                samples, scores, key, threshold,
                pred_masks=attack_pred, gt_masks=attack_gt,
                seg_threshold=seg_thr).items()}
            for key in ("language", "device")
        }
        payload = report.to_dict()

        dice_values = {}
        if attack_pred is not None:
            for row, i in enumerate(attack_rows):
                d, _ = dice_iou(attack_pred[row] >= (seg_thr or 0.5),
                                attack_gt[row] > 0.5)
                dice_values[i] = d
        export_errors(samples, scores, threshold, out_dir / "errors.jsonl", dice_values)
        _dump_points(np.asarray(scores), labels, out_dir)
    elif attack_pred is not None:
        from .evaluation import segmentation_metrics, sweep_seg_threshold
        seg_thr = args.seg_threshold
        if seg_thr is None:
            seg_thr, _ = sweep_seg_threshold(attack_pred, attack_gt)
        payload = {"segmentation": dataclasses.asdict(
            segmentation_metrics(attack_pred, attack_gt, seg_thr))}

    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    write_run_manifest(out_dir, "eval", {"checkpoint": str(args.checkpoint)},
                       None, _content_hash(Path(args.manifest), Path(args.checkpoint)),
                       started)

    if scores is not None:
        cls = payload["classification"]
        print(f"accuracy: {cls['accuracy']:.4f} at threshold {threshold:.2f}")
        print(f"attack F1: {cls['per_class']['attack']['f1']:.4f}")
    if payload.get("segmentation"):
        seg = payload["segmentation"]
        print(f"dice: {seg['dice_mean']:.4f} +- {seg['dice_std']:.4f} "
              f"at threshold {seg['threshold']:.2f}")
    print(f"report: {out_dir / 'metrics.json'}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    cfg = ServiceConfig(host=args.host, port=args.port, checkpoint_path=args.checkpoint)
    apply_env_overrides(cfg, "service")
    for item in args.set or []:
        path, raw = item.split("=", 1)
        set_by_path(cfg, path.strip(), raw.strip())
    try:
        serve(cfg)
    except (OSError, SystemExit) as exc:
        # uvicorn exits via SystemExit(1) when it cannot bind the socket.
        print(f"error: cannot serve on {cfg.host}:{cfg.port}: {exc}", file=sys.stderr)
        return EXIT_ENV
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thforge",
        description="Detection and localization of synthetic ID-document manipulations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1, help="samples per language/device/kind cell")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=list(MODEL_PROFILES), default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--freeze-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-cbam", action="store_true")
    p.add_argument("--no-fpn", action="store_true")
    p.add_argument("--single-task", choices=["det", "seg"])
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--no-mixup", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seg-threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ConfigurationError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV


if __name__ == "__main__":
    sys.exit(main())
