"""Synthetic fantasy-ID generator for desk-scale end-to-end runs.

Cards are rendered as background texture + header + elliptical portrait +
text lines. Attacks copy the portrait region from a donor card (face-swap
proxy) or erase and re-render one text line with different glyphs (inpaint
proxy). The ground-truth mask is exactly the set of pixels that differ
between the pre- and post-manipulation renders; device tags select output
resolution and JPEG quality.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .manifest import (ATTACK, BONA_FIDE, DEVICE_TAGS, LANGUAGE_TAGS,
                       ImageSample, save_manifest)

KINDS = ["bona", "faceswap", "inpaint"]

# (width, height), JPEG quality per acquisition device.
DEVICE_PROFILES = {
    "huawei": ((320, 200), 85),
    "iphone": ((288, 180), 92),
    "scanner": ((208, 130), 75),
}

# Distinct portrait identities; face-swap donors always use another entry.
SKIN_TONES = [
    (224, 172, 105), (198, 134, 66), (141, 85, 36),
    (255, 219, 172), (120, 92, 70), (230, 150, 120),
]
HAIR_TONES = [(70, 45, 20), (110, 70, 30), (50, 20, 8), (150, 100, 40)]
TEXT_COLORS = [(20, 25, 70), (75, 20, 20), (20, 55, 95), (10, 65, 30)]

# Clearly saturated pastel card stocks; genuine cards never contain the
# desaturated patches that manipulations leave behind.
BASE_TINTS = [
    (228, 206, 182), (182, 208, 230), (192, 226, 188),
    (230, 194, 212), (206, 188, 226), (226, 222, 180),
]

_GLYPHS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"


@dataclass
class CardSpec:
    size: tuple[int, int]
    base_hue: tuple[int, int, int]
    skin_idx: int
    hair_idx: int
    eye_jitter: float
    lines: list[tuple[str, tuple[int, int, int]]]
    header: str

    @staticmethod
    def random(rng: np.random.Generator, language: str, size: tuple[int, int]) -> "CardSpec":
        tint = BASE_TINTS[int(rng.integers(0, len(BASE_TINTS)))]
        base = tuple(int(np.clip(c + rng.integers(-7, 8), 0, 255)) for c in tint)
        lines = []
        for prefix in ("NAME", "ID", "EXP"):
            word = _random_text(rng, 8)
            lines.append((f"{prefix} {word}", TEXT_COLORS[0]))
        return CardSpec(
            size=size,
            base_hue=base,
            skin_idx=int(rng.integers(0, len(SKIN_TONES))),
            hair_idx=int(rng.integers(0, len(HAIR_TONES))),
            eye_jitter=float(rng.uniform(-0.02, 0.02)),
            lines=lines,
            header=f"{language.upper()} CARD",
        )


def _random_text(rng: np.random.Generator, n: int) -> str:
    return "".join(_GLYPHS[int(i)] for i in rng.integers(0, len(_GLYPHS), size=n))


def portrait_box(size: tuple[int, int]) -> tuple[int, int, int, int]:
    w, h = size
    return (int(0.05 * w), int(0.30 * h), int(0.34 * w), int(0.88 * h))


def _font_size(h: int) -> int:
    return max(8, round(0.11 * h))


def _line_pos(size: tuple[int, int], idx: int) -> tuple[int, int]:
    w, h = size
    return (int(0.40 * w), int(0.32 * h) + idx * int(0.19 * h))


def _line_band(size: tuple[int, int], idx: int) -> tuple[int, int, int, int]:
    """Rectangle replaced by the inpaint proxy around text line ``idx``."""
    w, h = size
    x, y = _line_pos(size, idx)
    pad = max(2, round(0.045 * h))
    return (x - 2 * pad, y - pad, round(0.97 * w), y + _font_size(h) + 2 * pad)


def render_card(spec: CardSpec) -> np.ndarray:
    """Pure render of a card spec to an RGB uint8 array."""
    w, h = spec.size
    ys = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None]
    base = np.asarray(spec.base_hue, dtype=np.float32)
    grad = base[None, None, :] * (1.0 - 0.15 * ys[..., None])
    xs = np.arange(w, dtype=np.float32)[None, :]
    guilloche = 6.0 * np.sin(xs / 9.0 + 4.0 * ys) + 4.0 * np.sin(xs / 23.0 - 7.0 * ys)
    canvas = np.clip(grad + guilloche[..., None], 0, 255).astype(np.uint8)

    im = Image.fromarray(canvas)
    draw = ImageDraw.Draw(im)
    font = ImageFont.load_default(size=_font_size(h))

    header_h = int(0.20 * h)
    dark = tuple(max(0, c - 45) for c in spec.base_hue)
    draw.rectangle([0, 0, w, header_h], fill=dark)
    draw.text((int(0.05 * w), max(1, header_h // 5)), spec.header,
              fill=(250, 250, 250), font=ImageFont.load_default(size=max(8, round(0.09 * h))))

    _draw_portrait(draw, portrait_box(spec.size), spec)

    for idx, (text, color) in enumerate(spec.lines):
        draw.text(_line_pos(spec.size, idx), text, fill=color, font=font)
    return np.asarray(im)


def _draw_portrait(draw: ImageDraw.ImageDraw, box: tuple[int, int, int, int],
                   spec: CardSpec) -> None:
    x0, y0, x1, y1 = box
    skin = SKIN_TONES[spec.skin_idx]
    hair = HAIR_TONES[spec.hair_idx]
    draw.rectangle(box, fill=tuple(min(255, c + 18) for c in spec.base_hue))
    draw.ellipse([x0 + 2, y0 + 2, x1 - 2, y1 - 2], fill=skin, outline=(70, 70, 70))
    # Hair: upper arc of the face ellipse.
    draw.chord([x0 + 2, y0 + 2, x1 - 2, y1 - 2], start=180, end=360, fill=hair)
    cx = (x0 + x1) / 2 + spec.eye_jitter * (x1 - x0)
    cy = (y0 + y1) / 2
    r = max(1, (x1 - x0) // 12)
    for dx in (-(x1 - x0) // 5, (x1 - x0) // 5):
        draw.ellipse([cx + dx - r, cy - r, cx + dx + r, cy + r], fill=(45, 30, 12))
    draw.line([cx - 2 * r, cy + (y1 - y0) // 4, cx + 2 * r, cy + (y1 - y0) // 4],
              fill=(90, 40, 40), width=1)


def _artifact_overlay(region: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resampling/compositing residue stamped onto a manipulated region.

    Partially desaturates the patch and adds a coarse checkerboard so the
    signature survives downscaling to model resolution; every pixel of the
    region changes, keeping the diff mask equal to the full region.
    """
    lum = region.astype(np.float32) @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    x = np.repeat(lum[..., None], 3, axis=2) * 0.82  # photometric mismatch
    h, w = region.shape[:2]
    cell = 16
    yy, xx = np.mgrid[0:h, 0:w]
    checker = ((((yy // cell) + (xx // cell)) % 2) * 2 - 1).astype(np.float32)
    amp = float(rng.uniform(10.0, 16.0))
    x = x + amp * checker[..., None]
    return np.clip(x, 1, 254).astype(np.uint8)


def apply_faceswap(image: np.ndarray, spec: CardSpec,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Replace the portrait rectangle with the same region of a donor card."""
    donor = CardSpec.random(rng, "donor", spec.size)
    donor.skin_idx = (spec.skin_idx + 1 + int(rng.integers(0, len(SKIN_TONES) - 1))) % len(SKIN_TONES)
    donor.hair_idx = (spec.hair_idx + 1) % len(HAIR_TONES)
    donor_img = render_card(donor)

    x0, y0, x1, y1 = portrait_box(spec.size)
    out = image.copy()
    out[y0:y1, x0:x1] = _artifact_overlay(donor_img[y0:y1, x0:x1], rng)
    return out, _diff_mask(image, out)


def apply_inpaint(image: np.ndarray, spec: CardSpec,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Erase one text line's field and re-render it with different glyphs.

    The field band is refilled with a slightly tinted clean background (the
    inpainting residue) and new text drawn in a different color, so the
    altered region is the full band.
    """
    idx = int(rng.integers(0, len(spec.lines)))
    old_text, _ = spec.lines[idx]
    prefix = old_text.split()[0]
    new_text = _random_text(rng, 8)
    while f"{prefix} {new_text}" == old_text:
        new_text = _random_text(rng, 8)
    color = TEXT_COLORS[1 + int(rng.integers(0, len(TEXT_COLORS) - 1))]
    tint = -12 if int(rng.integers(0, 2)) else 10

    erased = CardSpec(**{**spec.__dict__})
    erased.lines = list(spec.lines)
    erased.lines[idx] = ("", color)
    clean = render_card(erased)

    x0, y0, x1, y1 = _line_band(spec.size, idx)
    out = image.copy()
    out[y0:y1, x0:x1] = np.clip(
        clean[y0:y1, x0:x1].astype(np.int16) + tint, 0, 255).astype(np.uint8)
    im = Image.fromarray(out)
    ImageDraw.Draw(im).text(_line_pos(spec.size, idx), f"{prefix} {new_text}",
                            fill=color, font=ImageFont.load_default(size=_font_size(spec.size[1])))
    out = np.asarray(im).copy()
    out[y0:y1, x0:x1] = _artifact_overlay(out[y0:y1, x0:x1], rng)
    return out, _diff_mask(image, out)


def _diff_mask(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    return (np.any(before != after, axis=2).astype(np.uint8)) * 255


def generate_synthetic_dataset(out_dir: str | Path, n_per_cell: int,
                               rng_seed: int) -> Path:
    """Render the full language x device x kind grid and write a manifest.

    Produces ``n_per_cell * 10 * 3 * 3`` images (plus one mask per attack)
    and returns the manifest path. Same seed, same bytes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    for li, language in enumerate(LANGUAGE_TAGS):
        for di, device in enumerate(DEVICE_TAGS):
            size, quality = DEVICE_PROFILES[device]
            for ki, kind in enumerate(KINDS):
                for i in range(n_per_cell):
                    rng = np.random.default_rng(
                        np.random.SeedSequence([rng_seed, li, di, ki, i]))
                    spec = CardSpec.random(rng, language, size)
                    image = render_card(spec)
                    mask = None
                    attack_type = None
                    if kind == "faceswap":
                        image, mask = apply_faceswap(image, spec, rng)
                        attack_type = "synthetic_faceswap"
                    elif kind == "inpaint":
                        image, mask = apply_inpaint(image, spec, rng)
                        attack_type = "synthetic_inpaint"

                    stem = f"{language}_{device}_{kind}_{i:04d}"
                    img_path = out_dir / f"{stem}.jpg"
                    Image.fromarray(image).save(img_path, quality=quality)
                    mask_path = None
                    if mask is not None:
                        if not mask.any():
                            raise RuntimeError(f"empty attack mask for {stem}")
                        mask_path = out_dir / f"{stem}_mask.png"
                        Image.fromarray(mask).save(mask_path)

                    samples.append(ImageSample(
                        image_path=str(img_path),
                        label=ATTACK if mask is not None else BONA_FIDE,
                        language=language,
                        device=device,
                        mask_path=str(mask_path) if mask_path else None,
                        attack_type=attack_type,
                    ))
    return save_manifest(samples, out_dir / "manifest.jsonl")
