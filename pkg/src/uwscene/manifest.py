"""JSON manifest for named float arrays (checkpoints, token dumps).

One document stores any number of named float64 arrays with their shapes and
row-major values, plus a free-form ``notes`` object for architecture flags
and run metadata. Values are serialized through Python's shortest-repr float
formatting, which round-trips IEEE754 doubles exactly, so save -> load is
bit-exact. Arrays are written sorted by name so equal contents produce equal
bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

FORMAT_TAG = "uwscene-manifest-v1"


def save_manifest(path, arrays: dict, notes: dict | None = None) -> None:
    """Write named arrays + notes to a JSON manifest."""
    entries = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"array {name!r} contains non-finite values")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "values": arr.reshape(-1).tolist(),
        })
    doc = {"format": FORMAT_TAG, "notes": notes or {}, "arrays": entries}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_manifest(path):
    """Read a manifest back; returns (arrays dict, notes dict)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise ValidationError(f"not a recognized manifest: {path}")
    arrays = {}
    for entry in doc.get("arrays", []):
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed array entry in {path}: {exc}") from exc
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise ValidationError(
                f"array {name!r} in {path}: {values.size} values for shape {shape}"
            )
        arrays[name] = values.reshape(shape)
    notes = doc.get("notes", {})
    if not isinstance(notes, dict):
        raise ValidationError(f"manifest notes must be an object in {path}")
    return arrays, notes
