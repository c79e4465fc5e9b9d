"""Checkpoints: a JSON manifest next to a little-endian float32 blob."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _paths(path):
    path = Path(path)
    return path, path.with_suffix(path.suffix + ".json")


def save_checkpoint(path, arrays: dict, meta: dict) -> tuple[Path, Path]:
    """Concatenate ``arrays`` in insertion order into ``path``.

    The manifest records every array's name and shape so the blob can be
    cut back apart; ``meta`` is stored alongside unchanged.
    """
    blob, manifest = _paths(path)
    entries = [{"name": k, "shape": list(np.shape(a))} for k, a in arrays.items()]
    flat = [np.asarray(a, dtype="<f4").ravel() for a in arrays.values()]
    data = np.concatenate(flat) if flat else np.zeros(0, dtype="<f4")
    blob.parent.mkdir(parents=True, exist_ok=True)
    data.astype("<f4").tofile(blob)
    manifest.write_text(json.dumps({**meta, "dtype": "<f4", "arrays": entries}, indent=1, sort_keys=True))
    return blob, manifest


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_checkpoint`; arrays come back as float64."""
    blob, manifest = _paths(path)
    meta = json.loads(manifest.read_text())
    data = np.fromfile(blob, dtype="<f4").astype(np.float64)
    arrays, off = {}, 0
    for e in meta["arrays"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = data[off : off + size].reshape(e["shape"])
        off += size
    if off != data.size:
        raise ValueError(f"checkpoint blob holds {data.size} values, manifest describes {off}")
    return arrays, meta
