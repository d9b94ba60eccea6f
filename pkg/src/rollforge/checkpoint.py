"""Checkpoint files: a JSON manifest next to a raw float32 blob.

The manifest records the model config, free-form metadata (world
definition, training provenance flags) and one entry per tensor with
name, shape, dtype and byte offset into the blob.  The blob is the
tensors' little-endian float32 bytes back to back.  Round-tripping a
model through save/load is bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np
import torch

from .denoiser import Denoiser, DenoiserConfig

FORMAT_NAME = "rollforge-checkpoint"
FORMAT_VERSION = 1
CHECKPOINT_DIR_ENV = "ROLLFORGE_CHECKPOINT_DIR"


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".json":
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".bin")


def save_checkpoint(path, model: Denoiser, metadata: dict | None = None) -> Path:
    """Write manifest and blob for the model; returns the manifest path.

    path may be given with or without a .json suffix; the blob lands
    next to the manifest with a .bin suffix.
    """
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    tensors = []
    offset = 0
    chunks = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
        raw = arr.tobytes()
        tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": dataclasses.asdict(model.config),
        "metadata": metadata or {},
        "blob": blob_path.name,
        "tensors": tensors,
    }
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def resolve_checkpoint(name) -> Path:
    """Find a checkpoint by path, or by name under ROLLFORGE_CHECKPOINT_DIR."""
    for base in (None, os.environ.get(CHECKPOINT_DIR_ENV)):
        if base is None:
            p = Path(name)
        else:
            p = Path(base) / name
        manifest, _ = _paths(p)
        if manifest.exists():
            return manifest
    hint = f" (searched also under ${CHECKPOINT_DIR_ENV})" \
        if os.environ.get(CHECKPOINT_DIR_ENV) else ""
    raise FileNotFoundError(f"checkpoint not found: {name}{hint}")


def load_checkpoint(path) -> tuple[Denoiser, dict]:
    """Rebuild a model from a manifest; returns (model, manifest)."""
    manifest_path, _ = _paths(path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} manifest: {manifest_path}")
    blob_path = manifest_path.parent / manifest["blob"]
    blob = blob_path.read_bytes()
    config = DenoiserConfig(**manifest["config"])
    model = Denoiser(config)
    state = {}
    for spec in manifest["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count,
                            offset=spec["offset"]).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model, manifest
