"""Stochastic augmentation of decoded image/mask pairs, plus batch MixUp.

Photometric and compression transforms touch the image only; geometric
transforms are applied with identical parameters to the image and the mask
(mask warped with nearest-neighbor interpolation). All randomness comes from
a single generator seeded per call, so a given seed always reproduces the
same output.
"""

from __future__ import annotations

import cv2
import numpy as np
import torch

from ..config import AugmentConfig


def augment(image: np.ndarray, mask: np.ndarray | None,
            cfg: AugmentConfig, rng_seed: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Augment a uint8 RGB image (and optional uint8 mask) deterministically."""
    rng = np.random.default_rng(rng_seed)
    img = image.copy()

    # Photometric: image only.
    if rng.uniform() < cfg.p_photometric:
        b = rng.uniform(1 - cfg.brightness_limit, 1 + cfg.brightness_limit)
        c = rng.uniform(1 - cfg.contrast_limit, 1 + cfg.contrast_limit)
        img = _brightness_contrast(img, b, c)
    if rng.uniform() < cfg.p_photometric:
        h = rng.integers(-cfg.hsv_shift[0], cfg.hsv_shift[0] + 1)
        s = rng.integers(-cfg.hsv_shift[1], cfg.hsv_shift[1] + 1)
        v = rng.integers(-cfg.hsv_shift[2], cfg.hsv_shift[2] + 1)
        img = _hsv_shift(img, int(h), int(s), int(v))
    if rng.uniform() < cfg.p_photometric:
        shifts = rng.integers(-cfg.rgb_shift, cfg.rgb_shift + 1, size=3)
        img = np.clip(img.astype(np.int16) + shifts[None, None, :], 0, 255).astype(np.uint8)

    # Compression artifacts: image only.
    if rng.uniform() < cfg.p_jpeg:
        q = int(rng.integers(cfg.jpeg_quality[0], cfg.jpeg_quality[1] + 1))
        ok, enc = cv2.imencode(".jpg", img, [cv2.IMWRITE_JPEG_QUALITY, q])
        if ok:
            img = cv2.imdecode(enc, cv2.IMREAD_COLOR)
    if rng.uniform() < cfg.p_blur:
        sigma = rng.uniform(*cfg.blur_sigma)
        img = cv2.GaussianBlur(img, (0, 0), sigmaX=sigma)
    if rng.uniform() < cfg.p_noise:
        sigma = rng.uniform(*cfg.noise_sigma)
        noise = rng.normal(0.0, sigma, size=img.shape)
        img = np.clip(img.astype(np.float32) + noise, 0, 255).astype(np.uint8)

    # Geometric: image and mask together.
    if rng.uniform() < cfg.p_hflip:
        img = img[:, ::-1].copy()
        if mask is not None:
            mask = mask[:, ::-1].copy()
    if rng.uniform() < cfg.p_rot90:
        k = int(rng.integers(1, 4))
        img = np.rot90(img, k).copy()
        if mask is not None:
            mask = np.rot90(mask, k).copy()
    if rng.uniform() < cfg.p_elastic:
        map_x, map_y = _elastic_maps(img.shape[:2], cfg, rng)
        img = cv2.remap(img, map_x, map_y, cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
        if mask is not None:
            mask = cv2.remap(mask, map_x, map_y, cv2.INTER_NEAREST,
                             borderMode=cv2.BORDER_REFLECT)
    if rng.uniform() < cfg.p_perspective:
        mat, size = _perspective_matrix(img.shape[:2], cfg, rng)
        img = cv2.warpPerspective(img, mat, size, flags=cv2.INTER_LINEAR,
                                  borderMode=cv2.BORDER_CONSTANT)
        if mask is not None:
            mask = cv2.warpPerspective(mask, mat, size, flags=cv2.INTER_NEAREST,
                                       borderMode=cv2.BORDER_CONSTANT)

    return img, mask


def _brightness_contrast(img: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    x = img.astype(np.float32) * brightness
    x = (x - 128.0) * contrast + 128.0
    return np.clip(x, 0, 255).astype(np.uint8)


def _hsv_shift(img: np.ndarray, dh: int, ds: int, dv: int) -> np.ndarray:
    hsv = cv2.cvtColor(img, cv2.COLOR_RGB2HSV).astype(np.int16)
    hsv[..., 0] = (hsv[..., 0] + dh) % 180
    hsv[..., 1] = np.clip(hsv[..., 1] + ds, 0, 255)
    hsv[..., 2] = np.clip(hsv[..., 2] + dv, 0, 255)
    return cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB)


def _elastic_maps(shape: tuple[int, int], cfg: AugmentConfig,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    fields = rng.uniform(-1, 1, size=(2, h, w)).astype(np.float32)
    dx = cv2.GaussianBlur(fields[0], (0, 0), cfg.elastic_sigma) * cfg.elastic_alpha
    dy = cv2.GaussianBlur(fields[1], (0, 0), cfg.elastic_sigma) * cfg.elastic_alpha
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    return xs + dx, ys + dy


def _perspective_matrix(shape: tuple[int, int], cfg: AugmentConfig,
                        rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = shape
    jitter = rng.uniform(-cfg.perspective_scale, cfg.perspective_scale, size=8)
    src = np.float32([[0, 0], [w, 0], [w, h], [0, h]])
    dst = src + (jitter.reshape(4, 2) * np.float32([w, h])).astype(np.float32)
    return cv2.getPerspectiveTransform(src, dst.astype(np.float32)), (w, h)


def mixup(images_a: torch.Tensor, labels_a: torch.Tensor, masks_a: torch.Tensor | None,
          images_b: torch.Tensor, labels_b: torch.Tensor, masks_b: torch.Tensor | None,
          cfg: AugmentConfig, rng: np.random.Generator,
          lam: float | None = None):
    """Convexly mix two aligned batches with a Beta-distributed coefficient.

    With probability ``mixup_prob`` draws lambda ~ Beta(beta, beta) and mixes
    images, labels and masks as lam*a + (1-lam)*b; otherwise returns batch a
    unchanged. ``lam`` overrides the draw (testing hook).
    """
    if lam is None:
        if rng.uniform() >= cfg.mixup_prob:
            return images_a, labels_a.float(), masks_a
        lam = float(rng.beta(cfg.mixup_beta, cfg.mixup_beta))
    images = lam * images_a + (1.0 - lam) * images_b
    labels = lam * labels_a.float() + (1.0 - lam) * labels_b.float()
    masks = None
    if masks_a is not None and masks_b is not None:
        masks = lam * masks_a + (1.0 - lam) * masks_b
    return images, labels, masks
