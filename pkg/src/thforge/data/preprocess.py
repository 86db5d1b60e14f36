"""Image decoding and model-input normalization."""

from __future__ import annotations

import io
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from ..config import IMAGENET_MEAN, IMAGENET_STD
from ..errors import InputError

MASK_BINARIZE_THRESHOLD = 127  # pixel > 127 counts as manipulated


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an RGB uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc


def decode_image_bytes(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode image bytes: {exc}") from exc


def load_mask(path: str | Path) -> np.ndarray:
    """Decode a single-channel mask file to uint8 (0/255 expected)."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode mask {path}: {exc}") from exc


def preprocess(image: np.ndarray, size: int) -> torch.Tensor:
    """Bilinear-resize to size x size, scale to [0,1], ImageNet-normalize.

    Returns a float32 tensor of shape (3, size, size).
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"expected HxWx3 RGB array, got shape {image.shape}")
    resized = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    x = resized.astype(np.float32) / 255.0
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    x = (x - mean) / std
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))


def denormalize(x: torch.Tensor) -> torch.Tensor:
    """Inverse of the normalization step; recovers [0,1] pixel values."""
    mean = torch.tensor(IMAGENET_MEAN, dtype=x.dtype).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD, dtype=x.dtype).view(3, 1, 1)
    return x * std + mean


def preprocess_mask(mask: np.ndarray, size: int) -> torch.Tensor:
    """Nearest-resize a uint8 mask and binarize; returns float32 (1, size, size)."""
    if mask.ndim != 2:
        raise InputError(f"expected HxW mask array, got shape {mask.shape}")
    resized = cv2.resize(mask, (size, size), interpolation=cv2.INTER_NEAREST)
    binary = (resized > MASK_BINARIZE_THRESHOLD).astype(np.float32)
    return torch.from_numpy(binary).unsqueeze(0)
