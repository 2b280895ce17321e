"""Checkpoint format shared by all trainable modules.

A checkpoint is a directory of named raw little-endian float32 tensor files
plus a manifest.json recording names, shapes, dtypes, the training config and
its hash. Loading reproduces tensors bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

__all__ = ["config_hash", "save_tensors", "load_tensors", "save_checkpoint", "load_checkpoint"]


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable config; insensitive to key order."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _safe_name(name: str) -> str:
    return name.replace("/", "__").replace(".", "_") + ".f32"


def save_tensors(directory: Path, tensors: dict[str, np.ndarray]) -> dict:
    meta = {}
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        fname = _safe_name(name)
        np.ascontiguousarray(arr, dtype="<f4").tofile(directory / fname)
        meta[name] = {"file": fname, "shape": list(arr.shape), "dtype": "float32"}
    return meta


def load_tensors(directory: Path, meta: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, info in meta.items():
        arr = np.fromfile(directory / info["file"], dtype="<f4")
        out[name] = arr.reshape(info["shape"])
    return out


def save_checkpoint(
    directory: str | Path,
    tensors: dict[str, np.ndarray],
    config: dict,
    extra: dict | None = None,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tensors": save_tensors(directory, tensors),
        "config": config,
        "config_hash": config_hash(config),
        "extra": extra or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns (tensors, config, extra)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest under {directory}")
    manifest = json.loads(manifest_path.read_text())
    tensors = load_tensors(directory, manifest["tensors"])
    return tensors, manifest["config"], manifest.get("extra", {})
