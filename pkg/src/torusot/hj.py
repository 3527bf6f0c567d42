"""Hopf-Lax forward/backward solutions on a periodic grid, reversible pairs and K_0.

A step of size dt uses a tabulated kernel

    table[x, y, s] = J_P(y + q_s at t0  ->  x at t0 + dt)

over target nodes x, source nodes y and integer shifts q_s.  The forward step is
the min-plus product with this table, the backward step the max-minus product
with its transpose.  Because both directions share one table, a forward
multi-step map and the backward multi-step map are residuals of each other, so
upper >= lower and the endpoint identities of a reversible pair hold exactly up
to floating-point rounding.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .action import DEFAULT_NODES, solve_paths
from .errors import ConfigError, PreconditionViolated, TimeOutOfRange
from .pressure import PressureSpec, zero_pressure
from .torus import Grid, axis_differences, interpolate_periodic, shift_window, wrap

_TIME_SLACK = 1e-9
_KERNEL_CACHE: "OrderedDict[tuple, HopfLaxKernel]" = OrderedDict()
_KERNEL_CACHE_BYTES = 1_500_000_000
_GRID_TOL_CACHE: dict[Grid, float] = {}


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    values: np.ndarray
    time: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.grid.size:
            raise ConfigError(f"expected {self.grid.size} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("grid function values must be finite")
        object.__setattr__(self, "values", v)

    def __call__(self, x) -> np.ndarray:
        return interpolate_periodic(self.values, self.grid, x)

    @classmethod
    def from_function(cls, grid: Grid, fn, time: float = 0.0) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.points), dtype=float), time)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    grid: Grid
    values: np.ndarray  # (K + 1, size), one row per node of the time axis
    direction: str

    def slice(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.values[k], float(self.grid.times[k]))

    def evaluate(self, x, t) -> np.ndarray:
        """Multilinear in space, linear in time; x (B, n), t (B,) or scalar."""
        x = np.atleast_2d(x)
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        s = np.clip(t / self.grid.dt, 0.0, self.grid.K)
        k0 = np.minimum(np.floor(s).astype(int), self.grid.K - 1)
        w = s - k0
        at = interpolate_periodic(self.values, self.grid, x)  # (K+1, B)
        cols = np.arange(x.shape[0])
        return (1.0 - w) * at[k0, cols] + w * at[k0 + 1, cols]


@dataclass(frozen=True, eq=False)
class HopfLaxKernel:
    t0: float
    dt: float
    shifts: np.ndarray
    table: np.ndarray  # (size, size, S)


@dataclass(frozen=True, eq=False)
class ReversiblePair:
    upper: SpaceTimeField
    lower: SpaceTimeField
    k0_mask: np.ndarray  # (K - 1, size) for interior times t_1 .. t_{K-1}
    eps_rev: float
    grid_tol: float

    @property
    def grid(self) -> Grid:
        return self.upper.grid

    @property
    def gap(self) -> np.ndarray:
        return self.upper.values - self.lower.values

    @property
    def endpoint_gap(self) -> float:
        g = self.gap
        return float(max(np.max(np.abs(g[0])), np.max(np.abs(g[-1]))))


def kernel_segments(grid: Grid, dt: float) -> int:
    """Path segments per kernel entry: keeps the step of the kernel's paths near T/64."""
    return max(1, int(round((DEFAULT_NODES - 1) * dt / grid.T)))


def _cache_put(key, kern):
    _KERNEL_CACHE[key] = kern
    total = sum(k.table.nbytes for k in _KERNEL_CACHE.values())
    while total > _KERNEL_CACHE_BYTES and len(_KERNEL_CACHE) > 1:
        _, old = _KERNEL_CACHE.popitem(last=False)
        total -= old.table.nbytes


def clear_kernel_cache():
    _KERNEL_CACHE.clear()


def hopf_lax_kernel(grid: Grid, P: PressureSpec, t0: float, t1: float, segments: int | None = None) -> HopfLaxKernel:
    dt = t1 - t0
    if not dt > 0:
        raise TimeOutOfRange(f"need t0 < t1, got {t0}, {t1}")
    segments = kernel_segments(grid, dt) if segments is None else segments
    tkey = None if P.is_time_independent else float(t0)
    key = (grid.n, grid.m, P, tkey, float(dt), segments)
    if key in _KERNEL_CACHE:
        _KERNEL_CACHE.move_to_end(key)
        return _KERNEL_CACHE[key]
    q = shift_window(grid.n)
    pts = grid.points
    N, S = grid.size, q.shape[0]
    src = pts[None, :, None, :] + q[None, None, :, :]  # (1, N, S, n)
    if P.is_offset_only:
        disp = pts[:, None, None, :] - src
        table = np.sum(disp**2, axis=-1) / (2.0 * dt) + P.offset * dt
    else:
        X0 = np.broadcast_to(src, (N, N, S, grid.n)).reshape(-1, grid.n)
        X1 = np.broadcast_to(pts[:, None, None, :], (N, N, S, grid.n)).reshape(-1, grid.n)
        vals, _, _ = solve_paths(X0, X1, t0, t1, P, segments + 1)
        table = vals.reshape(N, N, S)
    kern = HopfLaxKernel(float(t0), float(dt), q, table)
    _cache_put(key, kern)
    return kern


def hopf_lax_step(
    phi: GridFunction,
    t0: float,
    t1: float,
    P: PressureSpec,
    direction: str = "forward",
    segments: int | None = None,
) -> GridFunction:
    """One Hopf-Lax step between t0 < t1.

    forward:  out(x) at t1 = min_{y,q} [J_P(y+q, x, t0, t1) + phi(y)]
    backward: out(x) at t0 = max_{y,q} [phi(y) - J_P(x, y+q, t0, t1)]
    """
    kern = hopf_lax_kernel(phi.grid, P, t0, t1, segments)
    if direction == "forward":
        if abs(phi.time - t0) > _TIME_SLACK:
            raise TimeOutOfRange(f"forward step expects data at t0={t0}, got {phi.time}")
        out = np.min(kern.table + phi.values[None, :, None], axis=(1, 2))
        return GridFunction(phi.grid, out, t1)
    if direction == "backward":
        if abs(phi.time - t1) > _TIME_SLACK:
            raise TimeOutOfRange(f"backward step expects data at t1={t1}, got {phi.time}")
        out = np.max(phi.values[:, None, None] - kern.table, axis=(0, 2))
        return GridFunction(phi.grid, out, t0)
    raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")


def propagate(phi_end: GridFunction, P: PressureSpec, direction: str = "forward") -> SpaceTimeField:
    grid = phi_end.grid
    times = grid.times
    vals = np.empty((grid.K + 1, grid.size))
    if direction == "forward":
        if abs(phi_end.time) > _TIME_SLACK:
            raise TimeOutOfRange("forward propagation starts from data at t = 0")
        cur = GridFunction(grid, phi_end.values, 0.0)
        vals[0] = cur.values
        for k in range(grid.K):
            cur = hopf_lax_step(cur, times[k], times[k + 1], P, "forward")
            vals[k + 1] = cur.values
    elif direction == "backward":
        if abs(phi_end.time - grid.T) > _TIME_SLACK:
            raise TimeOutOfRange("backward propagation starts from data at t = T")
        cur = GridFunction(grid, phi_end.values, grid.T)
        vals[-1] = cur.values
        for k in range(grid.K - 1, -1, -1):
            cur = hopf_lax_step(cur, times[k], times[k + 1], P, "backward")
            vals[k] = cur.values
    else:
        raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return SpaceTimeField(grid, vals, direction)


def grid_tol(grid: Grid) -> float:
    """Measured sup-norm error of the grid scheme on the pressureless point-source problem.

    Starting from a point mass at the origin, the exact forward solution is
    d(0, x)^2 / (2 t); the grid scheme restricts intermediate positions to grid
    nodes, and the worst deviation over all nodes and slices is the resolution's
    tolerance unit.
    """
    if grid in _GRID_TOL_CACHE:
        return _GRID_TOL_CACHE[grid]
    big = 1e6
    phi = np.full(grid.size, big)
    phi[0] = 0.0
    field = propagate(GridFunction(grid, phi, 0.0), zero_pressure(grid.n), "forward")
    d2 = np.sum((wrap(grid.points + 0.5) - 0.5) ** 2, axis=-1)
    err = 0.0
    for k in range(1, grid.K + 1):
        exact = d2 / (2.0 * grid.times[k])
        err = max(err, float(np.max(np.abs(field.values[k] - exact))))
    _GRID_TOL_CACHE[grid] = err
    return err


def reversibility_set(upper: SpaceTimeField, lower: SpaceTimeField, eps_rev: float) -> np.ndarray:
    """Mask of interior space-time nodes where upper - lower <= eps_rev."""
    gap = upper.values[1:-1] - lower.values[1:-1]
    return gap <= eps_rev


def make_reversible_pair(phi0: GridFunction, P: PressureSpec, T: float | None = None, eps_rev: float | None = None) -> ReversiblePair:
    grid = phi0.grid
    if T is not None and abs(T - grid.T) > _TIME_SLACK:
        raise ConfigError(f"horizon {T} does not match the grid's {grid.T}")
    fwd = propagate(phi0, P, "forward")
    lower = propagate(fwd.slice(grid.K), P, "backward")
    upper = propagate(lower.slice(0), P, "forward")
    tol = grid_tol(grid)
    eps = 5.0 * tol if eps_rev is None else float(eps_rev)
    return ReversiblePair(upper, lower, reversibility_set(upper, lower, eps), eps, tol)


def with_eps(pair: ReversiblePair, eps_rev: float) -> ReversiblePair:
    return ReversiblePair(pair.upper, pair.lower, reversibility_set(pair.upper, pair.lower, eps_rev), eps_rev, pair.grid_tol)


def discrete_legendre(points: np.ndarray, f: np.ndarray, slopes: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """f*(s) = max_i [s . x_i - f_i] for every slope s."""
    points = np.asarray(points, dtype=float).reshape(len(f), -1)
    slopes = np.asarray(slopes, dtype=float).reshape(-1, points.shape[1])
    out = np.empty(slopes.shape[0])
    for lo in range(0, slopes.shape[0], chunk):
        s = slopes[lo : lo + chunk]
        out[lo : lo + chunk] = np.max(s @ points.T - f[None, :], axis=1)
    return out


def _hull_slopes_1d(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Edge slopes of the lower convex hull of (x_i, f_i), x sorted increasingly."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies on or above the chord a -> i
            if (f[b] - f[a]) * (x[i] - x[a]) >= (f[i] - f[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    h = np.asarray(hull)
    return np.diff(f[h]) / np.diff(x[h])


def legendre_pair_zero_pressure(
    phi0: GridFunction, T: float | None = None, eps_rev: float | None = None, P: PressureSpec | None = None
) -> ReversiblePair:
    """Pressureless reversible pair through a double Legendre transform.

    Phi0 = T phi0 + |x|^2/2 is tabulated on the grid lifted over the shift
    window; its discrete biconjugate gives the convexified initial datum, and
    the slices follow from the one-step pressureless Hopf-Lax formulas.
    """
    if P is not None and not P.is_zero:
        raise PreconditionViolated("the Legendre construction needs P = 0")
    grid = phi0.grid
    T = grid.T if T is None else T
    if abs(T - grid.T) > _TIME_SLACK:
        raise ConfigError(f"horizon {T} does not match the grid's {grid.T}")
    q = shift_window(grid.n)
    lifted = (grid.points[None, :, :] + q[:, None, :]).reshape(-1, grid.n)
    vals = np.tile(phi0.values, q.shape[0])
    Phi = T * vals + 0.5 * np.sum(lifted**2, axis=-1)
    if grid.n == 1:
        order = np.argsort(lifted[:, 0], kind="stable")
        slopes = _hull_slopes_1d(lifted[order, 0], Phi[order])[:, None]
    else:
        slopes = lifted
    conj = discrete_legendre(lifted, Phi, slopes)
    biconj = discrete_legendre(slopes, conj, grid.points)
    psi0 = (biconj - 0.5 * np.sum(grid.points**2, axis=-1)) / T
    P0 = zero_pressure(grid.n)
    times = grid.times
    start = GridFunction(grid, psi0, 0.0)
    up = np.empty((grid.K + 1, grid.size))
    up[0] = psi0
    for k in range(1, grid.K + 1):
        up[k] = hopf_lax_step(start, 0.0, times[k], P0, "forward", segments=1).values
    end = GridFunction(grid, up[-1], grid.T)
    lo = np.empty_like(up)
    lo[-1] = up[-1]
    for k in range(grid.K):
        lo[k] = hopf_lax_step(end, times[k], grid.T, P0, "backward", segments=1).values
    upper = SpaceTimeField(grid, up, "forward")
    lower = SpaceTimeField(grid, lo, "backward")
    tol = grid_tol(grid)
    eps = 5.0 * tol if eps_rev is None else float(eps_rev)
    return ReversiblePair(upper, lower, reversibility_set(upper, lower, eps), eps, tol)


def masked_gradient(values: np.ndarray, mask: np.ndarray, grid: Grid) -> np.ndarray:
    """Centered gradient where both neighbours are masked, one-sided into the mask otherwise."""
    fwd, bwd = axis_differences(values, grid)
    m = mask.reshape(grid.shape)
    out = 0.5 * (fwd + bwd)
    for ax in range(grid.n):
        nxt = np.roll(m, -1, axis=ax).reshape(-1)
        prv = np.roll(m, 1, axis=ax).reshape(-1)
        only_next = nxt & ~prv
        only_prev = prv & ~nxt
        out[only_next, ax] = fwd[only_next, ax]
        out[only_prev, ax] = bwd[only_prev, ax]
    return out


def discrete_lipschitz(values: np.ndarray, grid: Grid) -> float:
    fwd, _ = axis_differences(values, grid)
    return float(np.max(np.abs(fwd)))


def k0_hj_residual(pair: ReversiblePair, P: PressureSpec) -> np.ndarray:
    """|psi_t + |grad psi|^2 / 2 - P| of the upper field on K_0 nodes (flattened)."""
    grid = pair.grid
    up = pair.upper.values
    out = []
    for j in range(grid.K - 1):
        k = j + 1
        mask = pair.k0_mask[j]
        if not mask.any():
            continue
        grad = masked_gradient(up[k], mask, grid)
        pt = (up[k + 1] - up[k - 1]) / (2.0 * grid.dt)
        res = pt + 0.5 * np.sum(grad**2, -1) - P.value(grid.points, grid.times[k])
        out.append(np.abs(res[mask]))
    return np.concatenate(out) if out else np.zeros(0)


@dataclass(frozen=True)
class SubsolutionReport:
    max_violation: float
    per_path: tuple[float, ...]


def check_generalized_subsolution(
    field: SpaceTimeField, P: PressureSpec, sample_paths, sub_tol: float = 0.0
) -> SubsolutionReport:
    """Largest excess of d/dt phi(x(t), t) over |x'|^2/2 + P along each path (0 if none)."""
    per = []
    for path in sample_paths:
        t = path.times
        if t[0] < -_TIME_SLACK or t[-1] > field.grid.T + _TIME_SLACK:
            raise TimeOutOfRange("sample path leaves the field's time axis")
        x = path.nodes
        phi = field.evaluate(x, t)
        d2 = 2.0 * path.delta
        dphi = (phi[2:] - phi[:-2]) / d2
        vel = (x[2:] - x[:-2]) / d2
        rhs = 0.5 * np.sum(vel**2, -1) + P.value(x[1:-1], t[1:-1])
        excess = dphi - rhs - sub_tol
        per.append(float(max(0.0, np.max(excess))) if excess.size else 0.0)
    return SubsolutionReport(max(per) if per else 0.0, tuple(per))
