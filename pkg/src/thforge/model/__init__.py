from .backbone import FeaturePyramid, SwinBackbone
from .cbam import CBAM, cbam_apply
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint_config, save_checkpoint
from .decoder import Decoder, DecoderBlock
from .fpn import FeaturePyramidFusion
from .net import DualHeadNet, PredictionPair

__all__ = [
    "CBAM",
    "CheckpointError",
    "Decoder",
    "DecoderBlock",
    "DualHeadNet",
    "FeaturePyramid",
    "FeaturePyramidFusion",
    "PredictionPair",
    "SwinBackbone",
    "cbam_apply",
    "load_checkpoint",
    "read_checkpoint_config",
    "save_checkpoint",
]
