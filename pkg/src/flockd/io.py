"""Bit-stable CSV/JSON artifacts.

Every file starts with a schema-version header: CSV files with a
``# schema: <name>/<version>`` comment line, JSON files with a leading
``"schema"`` member. Floats are written with Python's shortest round-trip
``repr``; non-finite floats become the strings ``"inf"``, ``"-inf"`` and
``"nan"`` in JSON.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .dynamics import Model, Trajectory
from .errors import ConfigError

__all__ = [
    "fmt",
    "write_csv",
    "write_json",
    "to_jsonable",
    "trajectory_columns",
    "write_trajectory",
    "read_trajectory",
    "write_columns",
]

SCHEMA_VERSION = 1


def fmt(x) -> str:
    """Shortest round-trip text of a number."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def _header(name):
    return f"# schema: flockd.{name}/{SCHEMA_VERSION}"


def write_csv(path, name: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_header(name) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, Model):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, name: str, payload: dict) -> None:
    body = {"schema": f"flockd.{name}/{SCHEMA_VERSION}"}
    body.update(to_jsonable(payload))
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")


def trajectory_columns(N: int, dim: int) -> List[str]:
    cols = ["t"]
    for a in range(N):
        cols += [f"x{a}_{i}" for i in range(dim)]
        cols += [f"v{a}_{i}" for i in range(dim)]
        cols.append(f"T{a}")
    return cols


def write_trajectory(path, traj: Trajectory) -> None:
    n, N, dim = traj.x.shape
    rows = []
    for k in range(n):
        row = [traj.t[k]]
        for a in range(N):
            row += list(traj.x[k, a]) + list(traj.v[k, a]) + [traj.T[k, a]]
        rows.append(row)
    write_csv(path, "trajectory", trajectory_columns(N, dim), rows)


def read_trajectory(path, chi: int, c: float, model: Model, dim: int) -> Trajectory:
    """Load a trajectory written by :func:`write_trajectory`."""
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory: {exc}", "replay")
    reader = csv.reader(lines)
    try:
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    except (StopIteration, ValueError) as exc:
        raise ConfigError(f"malformed trajectory file: {exc}", "replay")
    per = 2 * dim + 1
    if data.ndim != 2 or (data.shape[1] - 1) % per or header[0] != "t":
        raise ConfigError("trajectory columns do not match the configuration", "replay")
    N = (data.shape[1] - 1) // per
    body = data[:, 1:].reshape(len(data), N, per)
    return Trajectory(data[:, 0], body[:, :, :dim].copy(), body[:, :, dim:2 * dim].copy(),
                      body[:, :, 2 * dim].copy(), chi, c, model)


def write_columns(path, name: str, cols: Dict[str, np.ndarray]) -> None:
    keys = list(cols)
    n = len(cols[keys[0]])
    write_csv(path, name, keys, ([cols[k][i] for k in keys] for i in range(n)))
