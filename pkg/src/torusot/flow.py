"""Optimal velocity on the reversibility set, its Lipschitz extension, and the induced flow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import DEFAULT_NODES, Path, action_table
from .errors import EmptyReversibilitySet, IntegrationFailed, InvalidPath
from .hj import ReversiblePair, masked_gradient
from .pressure import PressureSpec
from .torus import Grid, interpolate_periodic, min_displacement, torus_distance, wrap
from .transport import DiscreteMeasure, TransportPlan, cost_matrix, solve_kantorovich, wasserstein

MAX_STEPS = 10_000_000


def flow_tol(grid: Grid) -> float:
    """1e-3 at m = 512, proportional to the spacing elsewhere."""
    return 1e-3 * 512.0 * grid.h


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Velocity per interior slice t_1 .. t_{K-1}: values (K - 1, size, n)."""

    grid: Grid
    values: np.ndarray
    mask: np.ndarray
    lipschitz: float
    extended: bool = False

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[1:-1]

    @property
    def bound(self) -> float:
        v = self.values if self.extended else self.values[self.mask]
        return float(np.max(np.linalg.norm(v, axis=-1))) if v.size else 0.0

    def _slice_at(self, k: int, x) -> np.ndarray:
        return np.stack([interpolate_periodic(self.values[k, :, d], self.grid, x) for d in range(self.grid.n)], -1)

    def at(self, x, t: float, time_interp: str = "characteristic", iterations: int = 3) -> np.ndarray:
        """Velocity at points x (B, n), time t; multilinear in space.

        Between slices, "linear" blends the two slices at x.  "characteristic"
        blends them at the feet x - s v and x + s' v of the straight segment
        through (x, t), which is exact when v is constant along trajectories.
        Beyond the first/last interior slice the velocity is frozen.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ts = self.times
        if len(ts) == 1 or t <= ts[0]:
            return self._slice_at(0, x)
        if t >= ts[-1]:
            return self._slice_at(len(ts) - 1, x)
        k = min(int(np.searchsorted(ts, t, side="right")) - 1, len(ts) - 2)
        back, ahead = t - ts[k], ts[k + 1] - t
        w = back / (ts[k + 1] - ts[k])
        v = (1.0 - w) * self._slice_at(k, x) + w * self._slice_at(k + 1, x)
        if time_interp == "linear" or w == 0.0:
            return v
        if time_interp != "characteristic":
            raise ValueError(f"unknown time interpolation {time_interp!r}")
        for _ in range(iterations):
            v = (1.0 - w) * self._slice_at(k, x - back * v) + w * self._slice_at(k + 1, x + ahead * v)
        return v


def velocity_on_k0(pair: ReversiblePair) -> VelocityField:
    grid = pair.grid
    vals = np.zeros((grid.K - 1, grid.size, grid.n))
    L = 0.0
    for j in range(grid.K - 1):
        mask = pair.k0_mask[j]
        if not mask.any():
            raise EmptyReversibilitySet(f"no reversible nodes at t = {grid.times[j + 1]}")
        v = masked_gradient(pair.upper.values[j + 1], mask, grid)
        v[~mask] = 0.0
        vals[j] = v
        m = mask.reshape(grid.shape)
        vg = v.reshape(grid.shape + (grid.n,))
        for ax in range(grid.n):
            both = m & np.roll(m, -1, axis=ax)
            if both.any():
                dv = np.linalg.norm(np.roll(vg, -1, axis=ax) - vg, axis=-1)[both]
                L = max(L, float(np.max(dv)) / grid.h)
    return VelocityField(grid, vals, pair.k0_mask.copy(), L)


def lipschitz_extend(v: VelocityField, chunk: int = 1 << 22) -> VelocityField:
    """McShane extension min_y (v(y) + L d(x, y)) per component, clamped to the masked range."""
    grid = v.grid
    out = v.values.copy()
    for j in range(out.shape[0]):
        mask = v.mask[j]
        if mask.all():
            continue
        src = grid.points[mask]
        sv = v.values[j][mask]
        lo, hi = sv.min(axis=0), sv.max(axis=0)
        rows = max(1, chunk // max(1, src.shape[0]))
        for a in range(0, grid.size, rows):
            d = torus_distance(grid.points[a : a + rows, None, :], src[None, :, :])  # (r, M)
            for c in range(grid.n):
                ext = np.min(sv[None, :, c] + v.lipschitz * d, axis=1)
                out[j, a : a + rows, c] = np.clip(ext, lo[c], hi[c])
        out[j][mask] = sv
    return VelocityField(grid, out, v.mask, v.lipschitz, extended=True)


@dataclass(frozen=True, eq=False)
class FlowMap:
    t1: float
    t2: float
    seeds: np.ndarray  # (B, n)
    arrivals: np.ndarray  # (B, n) lifted, i.e. seeds + displacement
    steps: int

    @property
    def points(self) -> np.ndarray:
        return wrap(self.arrivals)


def integrate_flow(
    v: VelocityField, seeds, t1: float, t2: float, max_step: float | None = None, time_interp: str = "characteristic"
) -> FlowMap:
    """Classical RK4 for x' = v(x, t) from t1 to t2 (t2 < t1 integrates backwards)."""
    x = np.atleast_2d(np.asarray(seeds, dtype=float)).copy()
    span = t2 - t1
    if span == 0:
        return FlowMap(t1, t2, x.copy(), x.copy(), 0)
    grid = v.grid
    vmax = max(v.bound, 1e-12)
    step = min(grid.h / vmax, grid.dt / 4.0)
    if max_step is not None:
        step = min(step, max_step)
    if not step > 0 or not np.isfinite(step):
        raise IntegrationFailed("step size underflow")
    n_steps = int(np.ceil(abs(span) / step - 1e-9))
    if n_steps > MAX_STEPS:
        raise IntegrationFailed(f"{n_steps} substeps exceed the limit {MAX_STEPS}")
    tau = span / n_steps
    start = x.copy()
    t = t1
    for _ in range(n_steps):
        k1 = v.at(x, t, time_interp)
        k2 = v.at(x + 0.5 * tau * k1, t + 0.5 * tau, time_interp)
        k3 = v.at(x + 0.5 * tau * k2, t + 0.5 * tau, time_interp)
        k4 = v.at(x + tau * k3, t + tau, time_interp)
        x = x + tau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += tau
    if not np.all(np.isfinite(x)):
        raise IntegrationFailed("non-finite position")
    return FlowMap(t1, t2, wrap(start), wrap(start) + (x - start), n_steps)


def closed_form_map(v: VelocityField, seeds, t1: float, t2: float) -> np.ndarray:
    """x + (t2 - t1) v(x, t1): the straight-line flow when there is no pressure."""
    x = np.atleast_2d(np.asarray(seeds, dtype=float))
    return x + (t2 - t1) * v.at(x, t1)


@dataclass(frozen=True, eq=False)
class MeasurePath:
    plan: TransportPlan
    t_start: float
    t_end: float
    pairs: tuple[tuple[int, int], ...]
    masses: np.ndarray
    orbits: tuple[Path, ...]

    def positions(self, t: float) -> np.ndarray:
        if t < self.t_start - 1e-12 or t > self.t_end + 1e-12:
            raise InvalidPath(f"time {t} outside [{self.t_start}, {self.t_end}]")
        return np.concatenate([p.position([t]) for p in self.orbits], 0)

    def slice(self, t: float) -> DiscreteMeasure:
        return DiscreteMeasure.create(self.positions(t), self.masses)


def build_measure_path(plan: TransportPlan, P: PressureSpec, t_start: float = 0.0, t_end: float = 1.0, node_count: int = DEFAULT_NODES) -> MeasurePath:
    if plan.rows is None or plan.cols is None:
        raise InvalidPath("plan must carry its source and target atoms")
    ii, jj = np.nonzero(plan.gamma > 0)
    orbits = []
    for i, j in zip(ii, jj):
        _, _, nodes = action_table(plan.rows.points[i : i + 1], plan.cols.points[j : j + 1], t_start, t_end, P, node_count, return_paths=True)
        orbits.append(Path(t_start, t_end, nodes[0, 0]))
    return MeasurePath(plan, t_start, t_end, tuple(zip(ii.tolist(), jj.tolist())), plan.gamma[ii, jj], tuple(orbits))


@dataclass(frozen=True)
class TransportReport:
    t1: float
    t2: float
    w1: float
    flow_cost: float
    K: float
    cost_gap: float
    mass: float
    steps: int

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("t1", "t2", "w1", "flow_cost", "K", "cost_gap", "mass", "steps")}


def verify_transport(path: MeasurePath, v: VelocityField, t1: float, t2: float, P: PressureSpec) -> TransportReport:
    """Push slice(t1) through the flow; compare with slice(t2) in W1 and in transport cost."""
    if not (path.t_start < t1 < t2 < path.t_end):
        raise InvalidPath("need interior times t1 < t2")
    mu1 = path.slice(t1)
    mu2 = path.slice(t2)
    fm = integrate_flow(v, mu1.points, t1, t2)
    pushed = DiscreteMeasure.create(fm.points, mu1.weights)
    w1 = wasserstein(pushed, mu2, 1.0)
    # cost of the flow coupling x -> T(x), against the optimal cost between the slices
    J = action_table(fm.seeds, fm.points, t1, t2, P)[0]
    flow_cost = float(np.dot(mu1.weights, np.diag(J)))
    plan, _ = solve_kantorovich(cost_matrix(mu1, mu2, P, t1, t2), mu1, mu2)
    return TransportReport(t1, t2, w1, flow_cost, plan.value, flow_cost - plan.value, float(pushed.weights.sum()), fm.steps)


def velocity_agreement(v_a: VelocityField, v_b: VelocityField, path: MeasurePath) -> float:
    """Largest difference of two velocity fields at orbit nodes masked in both (grid values)."""
    grid = v_a.grid
    worst = 0.0
    for j, t in enumerate(v_a.times):
        pts = path.positions(float(t))
        idx = np.array([grid.index_of(p) for p in pts])
        both = v_a.mask[j][idx] & v_b.mask[j][idx]
        if both.any():
            worst = max(worst, float(np.max(np.abs(v_a.values[j][idx[both]] - v_b.values[j][idx[both]]))))
    return worst


def mask_invariance(v: VelocityField, seeds_per_slice: int | None = None) -> float:
    """Flow masked nodes of the first interior slice forward; largest distance (in cells) to the mask later."""
    grid = v.grid
    start = np.nonzero(v.mask[0])[0]
    if seeds_per_slice is not None and start.size > seeds_per_slice:
        start = start[np.linspace(0, start.size - 1, seeds_per_slice).astype(int)]
    x = grid.points[start]
    worst = 0.0
    t_prev = v.times[0]
    for j in range(1, len(v.times)):
        t = float(v.times[j])
        x = integrate_flow(v, x, t_prev, t).points
        t_prev = t
        masked = grid.points[v.mask[j]]
        d = np.abs(min_displacement(x[:, None, :], masked[None, :, :])).max(axis=-1).min(axis=1)
        worst = max(worst, float(np.max(d)) / grid.h)
    return worst
