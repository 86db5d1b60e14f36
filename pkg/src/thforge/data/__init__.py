from .augment import augment, mixup
from .manifest import (ATTACK, ATTACK_TYPES, BONA_FIDE, DEVICE_TAGS,
                       LANGUAGE_TAGS, ImageSample, load_manifest,
                       manifest_counts, save_manifest)
from .preprocess import (decode_image_bytes, denormalize, load_image,
                         load_mask, preprocess, preprocess_mask)
from .synthetic import (DEVICE_PROFILES, CardSpec, apply_faceswap,
                        apply_inpaint, generate_synthetic_dataset,
                        portrait_box, render_card)

__all__ = [
    "ATTACK", "ATTACK_TYPES", "BONA_FIDE", "CardSpec", "DEVICE_PROFILES",
    "DEVICE_TAGS", "ImageSample", "LANGUAGE_TAGS", "apply_faceswap",
    "apply_inpaint", "augment", "decode_image_bytes", "denormalize",
    "generate_synthetic_dataset", "load_image", "load_manifest", "load_mask",
    "manifest_counts", "mixup", "portrait_box", "preprocess",
    "preprocess_mask", "render_card", "save_manifest",
]
