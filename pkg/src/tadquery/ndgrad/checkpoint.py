"""Parameter checkpoints: a JSON manifest next to one little-endian f32 blob."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

FORMAT = "tadquery-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: Dict[str, np.ndarray], extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path = path.with_suffix(".bin")
    entries = []
    offset = 0
    chunks = []
    for name, values in state.items():
        raw = np.ascontiguousarray(values, dtype="<f4").tobytes()
        entries.append({
            "name": name,
            "shape": list(np.shape(values)),
            "dtype": "f32",
            "offset": offset,
            "length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    blob_path.write_bytes(b"".join(chunks))
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "blob": blob_path.name,
        "parameters": entries,
        **(extra or {}),
    }
    manifest_path = path.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Inverse of :func:`save_checkpoint`. Values come back as float64."""
    manifest_path = Path(path).with_suffix(".json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{manifest_path} is not a {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"checkpoint version {manifest.get('version')} unsupported (want {VERSION})")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    state = {}
    for entry in manifest["parameters"]:
        if entry["dtype"] != "f32":
            raise CheckpointError(f"{entry['name']}: unsupported dtype {entry['dtype']}")
        raw = blob[entry["offset"]: entry["offset"] + entry["length"]]
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        state[entry["name"]] = values.reshape(entry["shape"])
    return state, manifest
