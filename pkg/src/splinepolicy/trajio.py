"""Trajectory CSV files and small JSON/digest helpers shared by the CLI."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from splinepolicy.bspline import DEFAULT_DT, ActionChunk


def _fmt(x: float) -> str:
    return repr(float(x))


def trajectory_csv_text(actions: np.ndarray, dt: float = DEFAULT_DT) -> str:
    a = np.asarray(actions, float)
    if a.ndim == 1:
        a = a[:, None]
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"dim{j}" for j in range(a.shape[1])]) + "\n")
    for i, row in enumerate(a):
        buf.write(",".join([_fmt(i * dt)] + [_fmt(v) for v in row]) + "\n")
    return buf.getvalue()


def write_trajectory_csv(path, actions: np.ndarray, dt: float = DEFAULT_DT) -> Path:
    path = Path(path)
    path.write_text(trajectory_csv_text(actions, dt), encoding="utf-8", newline="")
    return path


def read_trajectory_csv(path) -> ActionChunk:
    """Load a ``t,dim0,...`` CSV; ``dt`` comes from the spacing of the ``t`` column."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "t":
        raise ValueError(f"{path}: expected header starting with 't'")
    header = [h.strip() for h in rows[0]]
    if header[1:] != [f"dim{j}" for j in range(len(header) - 1)] or len(header) < 2:
        raise ValueError(f"{path}: malformed header {header}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(v) for v in r] for r in body])
    t, a = data[:, 0], data[:, 1:]
    dt = float(np.mean(np.diff(t))) if len(t) > 1 else DEFAULT_DT
    return ActionChunk(a, dt if dt > 0 else DEFAULT_DT)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path
