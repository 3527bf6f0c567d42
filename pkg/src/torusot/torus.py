"""Flat torus R^n/Z^n: wrapping, minimal displacements, uniform grids."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, CostTooLarge, DimensionError, InvalidPoint

MAX_GRID_DIM = 3


def _as_coords(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise InvalidPoint(f"non-finite coordinates: {arr!r}")
    return arr


def wrap(v) -> np.ndarray:
    """Fractional part of every coordinate, in [0, 1). Works on (..., n) arrays."""
    arr = _as_coords(v)
    out = arr - np.floor(arr)
    # v - floor(v) rounds up to exactly 1.0 for tiny negative v
    out[out >= 1.0] = 0.0
    return out


def min_displacement(x, y) -> np.ndarray:
    """Shortest d with wrap(x + d) = wrap(y); componentwise |d_i| <= 0.5, ties go to +0.5."""
    x = _as_coords(x)
    y = _as_coords(y)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    e = x - y
    return -(e - np.floor(e + 0.5))


def torus_distance(x, y) -> np.ndarray:
    return np.linalg.norm(min_displacement(x, y), axis=-1)


def shift_window(n: int, radius: int = 1) -> np.ndarray:
    """All integer vectors in {-radius..radius}^n, lexicographic order."""
    r = range(-radius, radius + 1)
    return np.array(list(itertools.product(r, repeat=n)), dtype=float).reshape(-1, n)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic spatial grid with spacing 1/m plus a uniform time axis on [0, T]."""

    n: int
    m: int
    T: float
    K: int

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.n

    @property
    def size(self) -> int:
        return self.m**self.n

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.K + 1) * (self.T / self.K)
        t[-1] = self.T
        return t

    @cached_property
    def points(self) -> np.ndarray:
        """(size, n) coordinates in C order of the multi-index."""
        idx = np.indices(self.shape).reshape(self.n, -1).T
        return idx / self.m

    def point_of(self, index: int) -> np.ndarray:
        return np.array(np.unravel_index(index, self.shape), dtype=float) / self.m

    def index_of(self, point) -> int:
        """Flat index of the grid node nearest to a torus point."""
        p = wrap(point)
        if p.shape[-1] != self.n:
            raise DimensionError(f"expected {self.n} coordinates, got {p.shape[-1]}")
        multi = np.rint(p * self.m).astype(int) % self.m
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def with_resolution(self, m: int) -> "Grid":
        return make_grid(self.n, m, self.T, self.K)


def make_grid(n: int, m: int, T: float, K: int) -> Grid:
    if n < 1:
        raise ConfigError(f"dimension must be >= 1, got {n}")
    if n > MAX_GRID_DIM:
        raise CostTooLarge(f"grid sweeps are O(m^(2n)); refusing n = {n} > {MAX_GRID_DIM}")
    if m < 4:
        raise ConfigError(f"need m >= 4 points per axis, got {m}")
    if K < 2:
        raise ConfigError(f"need K >= 2 time steps, got {K}")
    if not (T > 0 and np.isfinite(T)):
        raise ConfigError(f"horizon must be positive, got {T}")
    return Grid(int(n), int(m), float(T), int(K))


def interpolate_periodic(values: np.ndarray, grid: Grid, x) -> np.ndarray:
    """Multilinear periodic interpolation of nodal values (..., size) at points x (B, n).

    Returns (..., B).
    """
    x = wrap(np.atleast_2d(x))
    lead = values.shape[:-1]
    vals = values.reshape(lead + grid.shape)
    s = x * grid.m
    base = np.floor(s).astype(int)
    frac = s - base
    out = 0.0
    for corner in itertools.product((0, 1), repeat=grid.n):
        c = np.asarray(corner)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        idx = tuple(((base[:, d] + c[d]) % grid.m) for d in range(grid.n))
        out = out + vals[(Ellipsis,) + idx] * w
    return np.asarray(out)


def axis_differences(values: np.ndarray, grid: Grid):
    """Forward and backward periodic differences per axis: two (size, n) arrays."""
    v = values.reshape(grid.shape)
    fwd, bwd = [], []
    for ax in range(grid.n):
        fwd.append(((np.roll(v, -1, axis=ax) - v) / grid.h).reshape(-1))
        bwd.append(((v - np.roll(v, 1, axis=ax)) / grid.h).reshape(-1))
    return np.stack(fwd, -1), np.stack(bwd, -1)
