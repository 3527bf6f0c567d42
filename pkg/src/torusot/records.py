"""CSV and JSON emission and loading.

CSV schemas (header row always present):
  measure   x0[, x1, ...], weight
  plan      i, j, mass
  orbits    orbit_id, t, x0[, x1, ...], weight
  points    x0[, x1, ...]                      (flow seeds and arrivals)
  slices    t, i0[, i1, ...], value            (space-time fields, one row per node)
  path      t, x0[, x1, ...]
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path as FsPath

import numpy as np

from .errors import ConfigError, NumericalError


def coord_names(n: int) -> list[str]:
    return [f"x{d}" for d in range(n)]


def write_csv(path, header: list[str], rows) -> FsPath:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = FsPath(path)
    if not path.is_file():
        raise ConfigError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from None
    if data.size == 0:
        raise ConfigError(f"{path} has no data rows")
    if data.shape[1] != len(header):
        raise ConfigError(f"{path}: rows do not match the header {header}")
    return header, data


def write_measure(path, points: np.ndarray, weights: np.ndarray) -> FsPath:
    header = coord_names(points.shape[1]) + ["weight"]
    return write_csv(path, header, (list(p) + [w] for p, w in zip(points, weights)))


def read_measure(path) -> tuple[np.ndarray, np.ndarray]:
    header, data = read_csv(path)
    if header[-1] != "weight" or len(header) < 2:
        raise ConfigError(f"{path}: expected columns x0.., weight")
    return data[:, :-1], data[:, -1]


def write_plan(path, gamma: np.ndarray) -> FsPath:
    ii, jj = np.nonzero(gamma > 0)
    return write_csv(path, ["i", "j", "mass"], ((i, j, gamma[i, j]) for i, j in zip(ii, jj)))


def write_points(path, points: np.ndarray) -> FsPath:
    return write_csv(path, coord_names(points.shape[1]), points)


def read_points(path) -> np.ndarray:
    _, data = read_csv(path)
    return data


def write_orbits(path, times: np.ndarray, orbits: np.ndarray, weights: np.ndarray) -> FsPath:
    """orbits (J, N, n) sampled at `times` (N,)."""
    header = ["orbit_id", "t"] + coord_names(orbits.shape[2]) + ["weight"]
    rows = ([j, t] + list(x) + [weights[j]] for j in range(orbits.shape[0]) for t, x in zip(times, orbits[j]))
    return write_csv(path, header, rows)


def read_orbits(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (times (N,), orbits (J, N, n), weights (J,)); every orbit must use the same times."""
    header, data = read_csv(path)
    if header[:2] != ["orbit_id", "t"] or header[-1] != "weight" or len(header) < 4:
        raise ConfigError(f"{path}: expected columns orbit_id, t, x0.., weight")
    ids = data[:, 0].astype(int)
    order = np.unique(ids)
    times = None
    orbits, weights = [], []
    for j in order:
        rows = data[ids == j]
        rows = rows[np.argsort(rows[:, 1], kind="stable")]
        if times is None:
            times = rows[:, 1]
        elif rows.shape[0] != times.size or not np.allclose(rows[:, 1], times):
            raise ConfigError(f"{path}: orbit {j} does not share the time axis")
        w = np.unique(rows[:, -1])
        if w.size != 1:
            raise ConfigError(f"{path}: orbit {j} has a time-varying weight")
        orbits.append(rows[:, 2:-1])
        weights.append(w[0])
    return times, np.stack(orbits), np.array(weights)


def write_slices(path, grid, values: np.ndarray) -> FsPath:
    """Space-time field values (K + 1, size) as rows t, i0.., value."""
    idx = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), -1)
    header = ["t"] + [f"i{d}" for d in range(grid.n)] + ["value"]
    rows = ([t] + list(map(int, ix)) + [v] for k, t in enumerate(grid.times) for ix, v in zip(idx, values[k]))
    return write_csv(path, header, rows)


def read_slices(path, grid) -> np.ndarray:
    header, data = read_csv(path)
    if len(header) != grid.n + 2:
        raise ConfigError(f"{path}: expected columns t, i0.., value for n = {grid.n}")
    out = np.full((grid.K + 1, grid.size), np.nan)
    k = np.rint(data[:, 0] / grid.dt).astype(int)
    flat = np.ravel_multi_index(tuple(data[:, 1 + d].astype(int) for d in range(grid.n)), grid.shape)
    out[k, flat] = data[:, -1]
    if np.isnan(out).any():
        raise ConfigError(f"{path} does not cover every node of the grid")
    return out


def write_path(path, times: np.ndarray, nodes: np.ndarray) -> FsPath:
    return write_csv(path, ["t"] + coord_names(nodes.shape[1]), (np.r_[t, x] for t, x in zip(times, nodes)))


def jsonable(obj):
    """Plain Python types; raises NumericalError on NaN or infinity."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise NumericalError("non-finite value in report")
        return x
    return obj


def dumps(report: dict) -> str:
    return json.dumps(jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, report: dict) -> FsPath:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = dumps(report)
    path.write_text(text)
    return path
