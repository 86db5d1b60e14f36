"""Configuration dataclasses for the model, losses, data pipeline, training and service.

Two model profiles are provided: ``full`` matches the deployment-scale network
(512 px input, Swin-Large-like stage schedule, ~180M parameters) and ``desk``
is a pico variant of the same topology that trains in minutes on a laptop CPU.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

# Standard ImageNet channel statistics, applied after scaling pixels to [0, 1].
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ConfigurationError(ValueError):
    """Raised when a config violates its invariants or mismatches its inputs."""


@dataclass
class ModelConfig:
    input_size: int = 512
    patch_size: int = 4
    stage_dims: list[int] = field(default_factory=lambda: [192, 384, 768, 1536])
    stage_depths: list[int] = field(default_factory=lambda: [2, 2, 18, 2])
    stage_heads: list[int] = field(default_factory=lambda: [6, 12, 24, 48])
    window_size: int = 7
    fpn_channels: int = 256
    dropout_rate: float = 0.3
    mlp_ratio: float = 4.0
    cbam_reduction: int = 16
    use_cbam: bool = True
    use_fpn: bool = True
    multitask: bool = True
    # Which head remains when multitask is disabled.
    single_task: str = "det"

    def __post_init__(self):
        if not (len(self.stage_dims) == len(self.stage_depths) == len(self.stage_heads) == 4):
            raise ConfigurationError("stage_dims/stage_depths/stage_heads must all have length 4")
        stride = self.patch_size * 8  # patch embed + three patch-merging steps
        if self.input_size % stride != 0:
            raise ConfigurationError(
                f"input_size {self.input_size} must be divisible by patch_size*8 = {stride}"
            )
        for i in range(3):
            if self.stage_dims[i + 1] != 2 * self.stage_dims[i]:
                raise ConfigurationError("stage_dims must double between consecutive stages")
        for dim, heads in zip(self.stage_dims, self.stage_heads):
            if dim % heads != 0:
                raise ConfigurationError(f"stage dim {dim} not divisible by head count {heads}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigurationError("dropout_rate must be in [0, 1]")
        if self.single_task not in ("det", "seg"):
            raise ConfigurationError("single_task must be 'det' or 'seg'")

    @property
    def has_det_head(self) -> bool:
        return self.multitask or self.single_task == "det"

    @property
    def has_seg_head(self) -> bool:
        return self.multitask or self.single_task == "seg"

    def level_side(self, i: int) -> int:
        return self.input_size // (self.patch_size * 2 ** i)


def desk_model_config(**overrides) -> ModelConfig:
    cfg = dict(
        input_size=64,
        patch_size=4,
        stage_dims=[24, 48, 96, 192],
        stage_depths=[2, 2, 2, 2],
        stage_heads=[1, 2, 4, 8],
        window_size=4,
        fpn_channels=64,
        cbam_reduction=4,
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


def full_model_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


MODEL_PROFILES = {"desk": desk_model_config, "full": full_model_config}


@dataclass
class LossConfig:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    # symmetric: alpha scales both classes; asymmetric: alpha on positives,
    # 1-alpha on negatives (the class-balanced convention).
    focal_alpha_mode: str = "symmetric"
    dice_epsilon: float = 1.0
    w_main: float = 1.0
    w_aux: float = 0.4
    w_bound: float = 0.2
    boundary_band_px: int = 3
    init_log_var_det: float = 0.0
    init_log_var_seg: float = 0.0

    def __post_init__(self):
        if self.focal_gamma < 0:
            raise ConfigurationError("focal_gamma must be >= 0")
        if self.dice_epsilon <= 0:
            raise ConfigurationError("dice_epsilon must be > 0")
        if min(self.w_main, self.w_aux, self.w_bound) < 0:
            raise ConfigurationError("segmentation sub-loss weights must be >= 0")
        if self.focal_alpha_mode not in ("symmetric", "asymmetric"):
            raise ConfigurationError("focal_alpha_mode must be symmetric or asymmetric")


@dataclass
class AugmentConfig:
    p_photometric: float = 0.5
    brightness_limit: float = 0.3
    contrast_limit: float = 0.3
    hsv_shift: tuple[int, int, int] = (10, 20, 20)  # hue deg, sat, value (8-bit scale)
    rgb_shift: int = 15
    p_jpeg: float = 0.3
    jpeg_quality: tuple[int, int] = (60, 100)
    p_blur: float = 0.3
    blur_sigma: tuple[float, float] = (0.3, 1.5)
    p_noise: float = 0.3
    noise_sigma: tuple[float, float] = (5.0, 25.0)  # 8-bit scale
    p_hflip: float = 0.5
    p_rot90: float = 0.25
    p_elastic: float = 0.2
    elastic_alpha: float = 20.0
    elastic_sigma: float = 5.0
    p_perspective: float = 0.2
    perspective_scale: float = 0.05
    mixup_prob: float = 0.5
    mixup_beta: float = 0.4

    def __post_init__(self):
        for name in ("p_photometric", "p_jpeg", "p_blur", "p_noise", "p_hflip",
                     "p_rot90", "p_elastic", "p_perspective", "mixup_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name}={p} outside [0, 1]")
        lo, hi = self.jpeg_quality
        if not (60 <= lo <= hi <= 100):
            raise ConfigurationError("jpeg_quality range must lie within [60, 100]")


def no_augment_config() -> AugmentConfig:
    """All transform probabilities zero; augment() becomes the identity."""
    return AugmentConfig(
        p_photometric=0.0, p_jpeg=0.0, p_blur=0.0, p_noise=0.0, p_hflip=0.0,
        p_rot90=0.0, p_elastic=0.0, p_perspective=0.0, mixup_prob=0.0,
    )


@dataclass
class TrainConfig:
    epochs: int = 40
    freeze_epochs: int = 5
    base_lr: float = 3e-4
    lr_mult_backbone_and_base: float = 0.1
    lr_mult_cls_head: float = 0.05
    lr_mult_seg: float = 0.5
    lr_uncertainty_det: float = 1e-3
    lr_uncertainty_seg: float = 1e-4
    weight_decay: float = 1e-2
    grad_clip_norm: float = 1.0
    batch_size: int = 8
    eta_min: float = 3e-7
    seed: int = 0
    val_fraction: float = 0.2
    use_mixup: bool = True

    def __post_init__(self):
        if not self.freeze_epochs < self.epochs:
            raise ConfigurationError("freeze_epochs must be < epochs")
        lrs = (self.base_lr, self.lr_uncertainty_det, self.lr_uncertainty_seg)
        if min(lrs) <= 0 or min(self.lr_mult_backbone_and_base,
                                self.lr_mult_cls_head, self.lr_mult_seg) <= 0:
            raise ConfigurationError("all learning rates must be > 0")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    checkpoint_path: str = ""
    max_upload_bytes: int = 20 * 2 ** 20
    max_concurrent_inferences: int = 2
    detect_threshold: float = 0.80
    segment_threshold: float = 0.10
    # Artificial per-request delay, for shutdown/saturation testing only.
    debug_delay_ms: int = 0

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise ConfigurationError(f"invalid port {self.port}")


ENV_PREFIX = "THFORGE_"


def set_by_path(obj, path: str, raw: str) -> None:
    """Apply a ``a.b.c=value`` style override onto nested dataclasses.

    Values are parsed with the type of the existing field (bool accepts
    true/false/1/0; lists are comma-separated).
    """
    parts = path.split(".")
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise ConfigurationError(f"unknown config path {path!r}")
        obj = getattr(obj, p)
    leaf = parts[-1]
    if not hasattr(obj, leaf):
        raise ConfigurationError(f"unknown config path {path!r}")
    current = getattr(obj, leaf)
    setattr(obj, leaf, _parse_like(current, raw, path))


def _parse_like(current, raw: str, path: str):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"cannot parse {raw!r} as bool for {path}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (list, tuple)):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        elem = current[0] if len(current) else 0
        vals = [_parse_like(elem, x, path) for x in items]
        return type(current)(vals) if isinstance(current, tuple) else vals
    return raw


def apply_env_overrides(obj, section: str, environ=None) -> None:
    """Apply ``THFORGE_<SECTION>_<FIELD>=value`` environment overrides."""
    environ = os.environ if environ is None else environ
    prefix = f"{ENV_PREFIX}{section.upper()}_"
    for key, value in environ.items():
        if not key.startswith(prefix):
            continue
        fname = key[len(prefix):].lower()
        if hasattr(obj, fname):
            set_by_path(obj, fname, value)


def config_to_dict(obj) -> dict:
    return dataclasses.asdict(obj)
