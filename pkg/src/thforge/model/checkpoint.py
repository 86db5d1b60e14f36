"""Checkpoint archive: model config JSON plus one named weight blob per tensor.

The file is a ZIP holding ``config.json`` and ``weights/<name>.npy`` entries,
with names following the state-dict scheme ``<module>.<stage>.<block>.<param>``.
Entries carry a fixed timestamp so the same weights always produce byte
identical archives.
"""

from __future__ import annotations

import dataclasses
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from ..config import ConfigurationError, ModelConfig
from .net import DualHeadNet

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)
FORMAT_VERSION = 1


class CheckpointError(ConfigurationError):
    """Raised when an archive is malformed or mismatches its config."""


def save_checkpoint(model: DualHeadNet, path: str | Path,
                    extra: dict | None = None) -> Path:
    """Write the model's config and weights to a single deterministic archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "model_config": dataclasses.asdict(model.config),
    }
    if extra:
        payload["extra"] = extra

    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        _write(zf, "config.json", json.dumps(payload, indent=2, sort_keys=True).encode())
        for name, tensor in model.state_dict().items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy())
            _write(zf, f"weights/{name}.npy", buf.getvalue())
    tmp.replace(path)
    return path


def _write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, data)


def read_checkpoint_config(path: str | Path) -> tuple[ModelConfig, dict]:
    with zipfile.ZipFile(path) as zf:
        payload = json.loads(zf.read("config.json"))
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    return ModelConfig(**payload["model_config"]), payload.get("extra", {})


def load_checkpoint(path: str | Path, strict: bool = True) -> tuple[DualHeadNet, dict]:
    """Rebuild the model described by the archive and load its weights."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    config, extra = read_checkpoint_config(path)
    model = DualHeadNet(config)

    state = {}
    with zipfile.ZipFile(path) as zf:
        for entry in zf.namelist():
            if not entry.startswith("weights/") or not entry.endswith(".npy"):
                continue
            name = entry[len("weights/"):-len(".npy")]
            arr = np.load(io.BytesIO(zf.read(entry)))
            state[name] = torch.from_numpy(arr)

    expected = model.state_dict()
    mismatches = []
    for name, tensor in expected.items():
        if name not in state:
            mismatches.append(f"missing blob: {name}")
        elif tuple(state[name].shape) != tuple(tensor.shape):
            mismatches.append(
                f"shape diff for {name}: archive {tuple(state[name].shape)} "
                f"vs model {tuple(tensor.shape)}")
    for name in state:
        if name not in expected:
            mismatches.append(f"unexpected blob: {name}")
    if mismatches and strict:
        raise CheckpointError(
            "checkpoint/config mismatch:\n  " + "\n  ".join(sorted(mismatches)))

    model.load_state_dict(state, strict=strict)
    model.eval()
    return model, extra
