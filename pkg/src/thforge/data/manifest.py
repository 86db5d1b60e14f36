"""Dataset manifest: line-delimited JSON records of image samples."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import InputError

BONA_FIDE, ATTACK = 0, 1

LANGUAGE_TAGS = [
    "arabic", "chinese", "english", "french", "hindi",
    "persian", "portuguese", "russian", "turkish", "ukrainian",
]
DEVICE_TAGS = ["huawei", "iphone", "scanner"]
ATTACK_TYPES = ["digital_1", "digital_2", "synthetic_faceswap", "synthetic_inpaint"]


@dataclass
class ImageSample:
    image_path: str
    label: int
    language: str
    device: str
    mask_path: Optional[str] = None
    attack_type: Optional[str] = None

    def __post_init__(self):
        if self.label not in (BONA_FIDE, ATTACK):
            raise InputError(f"label must be 0 or 1, got {self.label!r}")
        if self.label == ATTACK and not self.mask_path:
            raise InputError("attack sample requires mask_path")
        if self.label == BONA_FIDE and self.mask_path:
            raise InputError("bona fide sample must not carry mask_path")
        if self.attack_type is not None and self.attack_type not in ATTACK_TYPES:
            raise InputError(f"unknown attack_type {self.attack_type!r}")

    def to_record(self) -> dict:
        rec = {"image_path": self.image_path, "label": self.label,
               "language": self.language, "device": self.device}
        if self.mask_path:
            rec["mask_path"] = self.mask_path
        if self.attack_type:
            rec["attack_type"] = self.attack_type
        return rec


def load_manifest(path: str | Path) -> list[ImageSample]:
    """Parse and validate a line-delimited JSON manifest.

    Relative image/mask paths are resolved against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    samples = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sample = ImageSample(
                image_path=str(_resolve(base, rec["image_path"])),
                label=rec["label"],
                language=rec["language"],
                device=rec["device"],
                mask_path=str(_resolve(base, rec["mask_path"])) if rec.get("mask_path") else None,
                attack_type=rec.get("attack_type"),
            )
        except (KeyError, InputError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}:{lineno}: invalid record: {exc}") from exc
        samples.append(sample)
    return samples


def _resolve(base: Path, p: str) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def save_manifest(samples: list[ImageSample], path: str | Path) -> Path:
    """Write samples as JSONL, storing paths relative to the manifest dir."""
    path = Path(path)
    base = path.parent
    lines = []
    for s in samples:
        rec = s.to_record()
        rec["image_path"] = _relativize(base, rec["image_path"])
        if "mask_path" in rec:
            rec["mask_path"] = _relativize(base, rec["mask_path"])
        lines.append(json.dumps(rec, sort_keys=True))
    path.write_text("\n".join(lines) + "\n")
    return path


def _relativize(base: Path, p: str) -> str:
    try:
        return str(Path(p).relative_to(base))
    except ValueError:
        return str(p)


def manifest_counts(samples: list[ImageSample]) -> dict:
    return {
        "total": len(samples),
        "by_label": dict(Counter(s.label for s in samples)),
        "by_language": dict(Counter(s.language for s in samples)),
        "by_device": dict(Counter(s.device for s in samples)),
    }
