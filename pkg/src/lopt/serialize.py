"""JSON checkpoint helpers shared by the LM and prompt parameterizations.

All checkpoints are single JSON documents with a "format" tag of
"lopt-ckpt/1" and a "tensors" map of {name: {"shape": [...], "data":
[...]}} holding row-major float64 values. json round-trips float64
exactly (repr-based), so save -> load is bit-identical.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .exceptions import CheckpointError

FORMAT = "lopt-ckpt/1"


def tensor_to_json(arr):
    a = np.asarray(arr, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def tensor_from_json(obj):
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=np.float64).reshape(shape)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed tensor entry: {e}") from e
    return data


def dump_document(doc, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_document(path, expected_keys=()):
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if doc.get("format") != FORMAT:
        raise CheckpointError(
            f"{path}: expected format {FORMAT!r}, got {doc.get('format')!r}"
        )
    for key in expected_keys:
        if key not in doc:
            raise CheckpointError(f"{path}: missing key {key!r}")
    return doc


def checksum_arrays(named_arrays):
    """sha256 over names and raw bytes, order-independent via name sort."""
    h = hashlib.sha256()
    for name in sorted(named_arrays):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(named_arrays[name], dtype=np.float64).tobytes())
    return h.hexdigest()
