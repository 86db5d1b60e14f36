"""thforge: joint detection and localization of synthetic manipulations in
identity-document images."""

from .config import (AugmentConfig, ConfigurationError, LossConfig,
                     ModelConfig, ServiceConfig, TrainConfig,
                     desk_model_config, full_model_config, no_augment_config)
from .errors import InputError, UndefinedMetricError
from .model import (DualHeadNet, FeaturePyramid, PredictionPair,
                    load_checkpoint, save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "ConfigurationError",
    "DualHeadNet",
    "FeaturePyramid",
    "InputError",
    "LossConfig",
    "ModelConfig",
    "PredictionPair",
    "ServiceConfig",
    "TrainConfig",
    "UndefinedMetricError",
    "desk_model_config",
    "full_model_config",
    "load_checkpoint",
    "no_augment_config",
    "save_checkpoint",
    "__version__",
]
