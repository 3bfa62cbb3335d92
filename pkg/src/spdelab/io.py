"""Flat binary fields with JSON sidecars, and CSV/JSON writers with stable formatting."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def write_field(path, values: np.ndarray, meta: dict) -> None:
    """Little-endian float64, row-major, plus ``<path>.json`` with shape and metadata."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(arr.tobytes(order="C"))
    side = dict(meta)
    side.update({"shape": list(arr.shape), "dtype": "float64", "byteorder": "little", "order": "C"})
    write_json(sidecar_path(path), side)


def read_field(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(meta["shape"])
    return arr.copy(), meta


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def fmt(value) -> str:
    """Shortest round-tripping text for a float; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
