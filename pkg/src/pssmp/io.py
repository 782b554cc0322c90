"""Path CSV and canonical JSON helpers."""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np


def _num(x):
    return repr(float(x))


def write_paths_csv(path, times, values):
    """Rows ``path_id,t,value`` for an ``(n_paths, n_times)`` array."""
    values = np.atleast_2d(values)
    ts = [_num(t) for t in times]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path_id,t,value\n")
        for i, row in enumerate(values):
            fh.writelines(f"{i},{t},{_num(v)}\n" for t, v in zip(ts, row))


def read_paths_csv(path):
    """Inverse of :func:`write_paths_csv`: returns ``(times, values)``."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    ids = data["path_id"].astype(int)
    n = ids.max() + 1
    values = data["value"].reshape(n, -1)
    return data["t"][: values.shape[1]], values


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")
