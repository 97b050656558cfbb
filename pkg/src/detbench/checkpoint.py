"""Weight checkpoints: one flat little-endian float64 file plus a JSON manifest.

The manifest lists every tensor's name, shape and byte offset into the
``.bin`` file; it is written next to it as ``<name>.json``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

DTYPE = np.dtype("<f8")


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".json")


def save_weights(weights: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    path = Path(path)
    entries, offset = [], 0
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        for name in sorted(weights):
            arr = np.ascontiguousarray(weights[name], dtype=DTYPE)
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    os.replace(tmp, path)
    doc = {"dtype": "float64", "byte_order": "little", "tensors": entries, "meta": meta or {}}
    mtmp = manifest_path(path).with_suffix(".json.tmp")
    mtmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    os.replace(mtmp, manifest_path(path))


def load_weights(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(weights, meta)``.

    Raises:
        ValueError: if the manifest and the binary file disagree.
    """
    path = Path(path)
    doc = json.loads(manifest_path(path).read_text())
    blob = path.read_bytes()
    weights = {}
    for e in doc["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + count * DTYPE.itemsize
        if end > len(blob):
            raise ValueError(f"{path}: tensor {e['name']} extends past the end of the file")
        weights[e["name"]] = np.frombuffer(blob, DTYPE, count, e["offset"]).reshape(e["shape"]).astype(np.float64)
    return weights, doc.get("meta", {})
