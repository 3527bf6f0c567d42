"""Kantorovich transport with cost J_P, Wasserstein distances, and the Euler value E."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components, csgraph_from_dense, shortest_path

from .action import DEFAULT_NODES, action_table
from .errors import DimensionError, InvalidMeasure
from .hj import GridFunction, ReversiblePair, grid_tol, make_reversible_pair
from .pressure import PressureSpec
from .torus import Grid, interpolate_periodic, torus_distance, wrap

WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray  # (k, n) in [0, 1)
    weights: np.ndarray  # (k,)

    def __post_init__(self):
        pts = wrap(np.atleast_2d(np.asarray(self.points, dtype=float)))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.size or w.size == 0:
            raise InvalidMeasure("need one positive weight per atom")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvalidMeasure("weights must be finite and positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidMeasure(f"weights sum to {w.sum()!r}, not 1")
        # merge duplicate atoms, keeping first-occurrence order
        _, first, inv = np.unique(pts, axis=0, return_index=True, return_inverse=True)
        inv = inv.reshape(-1)
        if first.size < pts.shape[0]:
            order = np.argsort(first)
            rank = np.empty_like(order)
            rank[order] = np.arange(order.size)
            merged = np.zeros(first.size)
            np.add.at(merged, rank[inv], w)
            pts, w = pts[first[order]], merged
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size

    @classmethod
    def create(cls, points, weights=None, normalize: bool = True) -> "DiscreteMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 1 and pts.shape[1] > 1 and weights is not None and np.size(weights) > 1:
            pts = pts.T
        w = np.ones(pts.shape[0]) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if normalize:
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise InvalidMeasure("weights must be finite and positive")
            w = w / w.sum()
        return cls(pts, w)

    @classmethod
    def dirac(cls, x) -> "DiscreteMeasure":
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), np.ones(1))


def random_measure(
    n: int,
    k: int,
    rng: np.random.Generator,
    grid: Grid | None = None,
    uniform: bool = False,
    min_separation: float = 0.0,
    max_tries: int = 10_000,
) -> DiscreteMeasure:
    """k random atoms, optionally snapped to the nodes of `grid` and pairwise separated."""
    for _ in range(max_tries):
        if grid is None:
            pts = rng.random((k, n))
        else:
            pts = grid.points[rng.choice(grid.size, size=k, replace=False)]
        if k < 2 or min_separation <= 0:
            break
        d = torus_distance(pts[:, None, :], pts[None, :, :])
        if d[np.triu_indices(k, 1)].min() >= min_separation:
            break
    else:
        raise InvalidMeasure(f"could not place {k} atoms {min_separation} apart")
    w = np.ones(k) if uniform else rng.uniform(0.5, 1.5, size=k)
    return DiscreteMeasure.create(pts, w)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    gamma: np.ndarray
    cost: np.ndarray
    rows: DiscreteMeasure | None = None
    cols: DiscreteMeasure | None = None

    @property
    def value(self) -> float:
        return float(np.sum(self.gamma * self.cost))

    def support(self, rel_tol: float = 1e-12) -> list[tuple[int, int]]:
        thr = rel_tol * float(self.gamma.max())
        ii, jj = np.nonzero(self.gamma > thr)
        return list(zip(ii.tolist(), jj.tolist()))

    @property
    def is_permutation(self) -> bool:
        """Every source atom is sent to a single target atom."""
        return all(int(np.sum(row > 1e-12 * row.max())) == 1 for row in self.gamma)

    @property
    def monge_map(self) -> np.ndarray | None:
        return np.argmax(self.gamma, axis=1) if self.is_permutation else None


@dataclass(frozen=True, eq=False)
class DualPotentials:
    """v_j - u_i <= c_ij, with equality on the support of the optimal plan."""

    u: np.ndarray
    v: np.ndarray

    def value(self, w0, w1) -> float:
        return float(np.dot(self.v, w1) - np.dot(self.u, w0))

    def max_violation(self, cost: np.ndarray) -> float:
        return float(np.max(self.v[None, :] - self.u[:, None] - cost))


def cost_matrix(mu0: DiscreteMeasure, mu1: DiscreteMeasure, P: PressureSpec, t1: float, t2: float, node_count: int = DEFAULT_NODES) -> np.ndarray:
    if mu0.n != mu1.n or mu0.n != P.n:
        raise DimensionError("measures and pressure must share the dimension")
    return action_table(mu0.points, mu1.points, t1, t2, P, node_count)[0]


def _tree_potentials(basis, m, n, C):
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append((m + j, i, j))
        adj[m + j].append((i, i, j))
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    queue = deque([0])
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    while queue:
        a = queue.popleft()
        for b, i, j in adj[a]:
            if seen[b]:
                continue
            seen[b] = True
            if b >= m:
                v[j] = u[i] + C[i, j]
            else:
                u[i] = v[j] - C[i, j]
            queue.append(b)
    return u, v, adj


def _tree_path(adj, start, goal):
    """Node path start -> goal in the basis tree, as a list of (i, j) edges."""
    prev: dict[int, tuple[int, tuple[int, int]]] = {start: (-1, (-1, -1))}
    queue = deque([start])
    while queue:
        a = queue.popleft()
        if a == goal:
            break
        for b, i, j in adj[a]:
            if b not in prev:
                prev[b] = (a, (i, j))
                queue.append(b)
    edges = []
    node = goal
    while node != start:
        node, e = prev[node]
        edges.append(e)
    return edges[::-1]


def _transport_simplex(C: np.ndarray, a: np.ndarray, b: np.ndarray, max_iter: int = 100_000):
    m, n = C.shape
    x = np.zeros((m, n))
    basis: list[tuple[int, int]] = []
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    i = j = 0
    # northwest corner: m + n - 1 cells forming a spanning tree
    while True:
        q = min(ra[i], rb[j])
        x[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    scale = max(1.0, float(np.max(np.abs(C))))
    tol = 1e-12 * scale
    degenerate_streak = 0
    for _ in range(max_iter):
        u, v, adj = _tree_potentials(basis, m, n, C)
        red = C - (v[None, :] - u[:, None])
        if red.min() >= -tol:
            return x, u, v
        if degenerate_streak > 50:
            ie, je = map(int, np.argwhere(red < -tol)[0])  # Bland: lowest index
        else:
            ie, je = map(int, np.unravel_index(np.argmin(red), red.shape))
        path = _tree_path(adj, m + je, ie)
        minus = path[0::2]
        theta = min(x[c] for c in minus)
        leave = next(c for c in minus if x[c] == theta)
        for k, c in enumerate(path):
            x[c] += -theta if k % 2 == 0 else theta
        x[ie, je] += theta
        x[leave] = 0.0
        basis.remove(leave)
        basis.append((ie, je))
        degenerate_streak = degenerate_streak + 1 if theta == 0 else 0
    raise RuntimeError("transportation simplex did not terminate")


def _weights(w) -> tuple[np.ndarray, DiscreteMeasure | None]:
    if isinstance(w, DiscreteMeasure):
        return w.weights, w
    arr = np.asarray(w, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or abs(arr.sum() - 1.0) > WEIGHT_TOL:
        raise InvalidMeasure("weights must be nonnegative and sum to 1")
    return arr, None


def solve_kantorovich(cost, w0, w1) -> tuple[TransportPlan, DualPotentials]:
    """Exact transportation LP (network simplex on the bipartite graph).

    w0, w1 are weight vectors or DiscreteMeasure instances.
    """
    C = np.asarray(cost, dtype=float)
    a, mu0 = _weights(w0)
    b, mu1 = _weights(w1)
    if C.shape != (a.size, b.size):
        raise DimensionError(f"cost shape {C.shape} does not match weights {a.size} x {b.size}")
    if not np.all(np.isfinite(C)):
        raise InvalidMeasure("costs must be finite")
    gamma, u, v = _transport_simplex(C, a, b)
    gamma = np.maximum(gamma, 0.0)
    return TransportPlan(gamma, C, mu0, mu1), DualPotentials(u, v)


def centered_duals(plan: TransportPlan, duals: DualPotentials) -> DualPotentials:
    """Optimal potentials near the middle of the optimal dual face.

    On the support of the plan the potentials are fixed up to one constant per
    connected component of the support graph; off-support feasibility turns
    into difference constraints c_B - c_A <= D_AB between those constants.
    Averaging the extreme (shortest-path) solutions over every reference
    component gives a feasible point that keeps slack on every constraint that
    is not forced tight, so atoms stay away from kinks of the dual seed.
    """
    m, n = plan.gamma.shape
    supp = plan.gamma > 0
    graph = np.zeros((m + n, m + n))
    graph[:m, m:] = supp
    n_comp, label = connected_components(graph, directed=False)
    if n_comp == 1:
        return duals
    ru, rv = label[:m], label[m:]
    slack = plan.cost - (duals.v[None, :] - duals.u[:, None])
    D = np.full((n_comp, n_comp), np.inf)
    # cell (i, j) bounds c_{comp(j)} - c_{comp(i)}
    np.minimum.at(D, (ru[:, None].repeat(n, 1), rv[None, :].repeat(m, 0)), np.maximum(slack, 0.0))
    np.fill_diagonal(D, 0.0)
    # zero-weight (tight) constraints are real edges, so mark absent ones by inf
    dist = shortest_path(csgraph_from_dense(D, null_value=np.inf), method="FW", directed=True)
    shift = np.zeros(n_comp)
    for r in range(n_comp):
        hi, lo = dist[r], -dist[:, r]
        cap = np.isfinite(hi) & np.isfinite(lo)
        mid = np.where(cap, 0.5 * (hi + lo), np.where(np.isfinite(hi), hi, np.where(np.isfinite(lo), lo, 0.0)))
        shift += mid - mid.mean()
    shift /= n_comp
    return DualPotentials(duals.u + shift[ru], duals.v + shift[rv])


def wasserstein(mu0: DiscreteMeasure, mu1: DiscreteMeasure, p: float = 1.0) -> float:
    if p < 1:
        raise InvalidMeasure("p must be >= 1")
    C = torus_distance(mu0.points[:, None, :], mu1.points[None, :, :]) ** p
    plan, _ = solve_kantorovich(C, mu0, mu1)
    return float(max(plan.value, 0.0) ** (1.0 / p))


def w1_dual_lower_bound(mu0: DiscreteMeasure, mu1: DiscreteMeasure, n_modes: int = 256) -> float:
    """Best value of int f d(mu1 - mu0) over a finite family of 1-Lipschitz trigonometric f (n = 1).

    With F(x) = (mu0 - mu1)([0, x]), the pairing equals int f' F.  Members have
    f' = (sign(F - c) - mean) / (1 + |mean|) for every level c taken by F,
    smoothed by the Fejer kernel of order n_modes (which keeps |f'| <= 1).
    """
    if mu0.n != 1 or mu1.n != 1:
        raise DimensionError("the trigonometric dual family is one-dimensional")
    pts = np.concatenate([mu0.points[:, 0], mu1.points[:, 0]])
    jumps = np.concatenate([mu0.weights, -mu1.weights])
    order = np.argsort(pts, kind="stable")
    pts, jumps = pts[order], jumps[order]
    edges = np.concatenate([[0.0], pts, [1.0]])
    F = np.concatenate([[0.0], np.cumsum(jumps)])  # value on [edges[l], edges[l+1])
    lengths = np.diff(edges)
    k = np.arange(1, n_modes + 1)
    fejer = 1.0 - k / (n_modes + 1.0)
    e = np.exp(-2j * np.pi * np.outer(k, edges))  # (modes, L+1)
    best = 0.0
    for c in np.unique(F):
        s = np.sign(F - c)
        mean = float(np.dot(s, lengths))
        g = (s - mean) / (1.0 + abs(mean))
        # Fourier coefficients of the piecewise-constant g, then of its primitive f
        gk = np.sum(g[None, :] * (e[:, :-1] - e[:, 1:]), axis=1) / (2j * np.pi * k)
        fk = gk / (2j * np.pi * k)

        def f(x):
            return 2.0 * np.real(np.exp(2j * np.pi * np.outer(x, k)) @ (fejer * fk))

        val = float(np.dot(mu1.weights, f(mu1.points[:, 0])) - np.dot(mu0.weights, f(mu0.points[:, 0])))
        best = max(best, val)
    return best


def euler_value(pair: ReversiblePair, mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> float:
    """E = sum w1 psi(y, T) - sum w0 psi(x, 0) from the pair's endpoint slices."""
    grid = pair.grid
    end = interpolate_periodic(pair.upper.values[-1], grid, mu1.points)
    start = interpolate_periodic(pair.upper.values[0], grid, mu0.points)
    return float(np.dot(mu1.weights, end) - np.dot(mu0.weights, start))


def dual_seed(grid: Grid, duals: DualPotentials, mu1: DiscreteMeasure, P: PressureSpec, T: float) -> np.ndarray:
    """Extension of the Kantorovich potential u to the grid: max_j [v_j - J_P(x, y_j, 0, T)].

    It agrees with u at the source atoms and is itself a backward solution, so
    it is the natural grid interpolation of u.
    """
    J = action_table(grid.points, mu1.points, 0.0, T, P)[0]
    return np.max(duals.v[None, :] - J, axis=1)


def fourier_seed(grid: Grid, rng: np.random.Generator, n_modes: int = 4, scale: float = 0.05) -> np.ndarray:
    vals = np.zeros(grid.size)
    for _ in range(n_modes):
        k = rng.integers(-3, 4, size=grid.n)
        if not k.any():
            k[0] = 1
        theta = 2 * np.pi * grid.points @ k
        a, b = rng.normal(scale=scale, size=2) / np.linalg.norm(k)
        vals += a * np.cos(theta) + b * np.sin(theta)
    return vals


@dataclass(eq=False)
class DualityReport:
    K: float
    E_best: float
    gap: float
    best_seed: str
    E_by_seed: dict
    plan: TransportPlan
    duals: DualPotentials
    pair: ReversiblePair
    pairs: dict = field(repr=False)
    grid_tol: float = 0.0

    @property
    def relative_gap(self) -> float:
        return self.gap / abs(self.K) if self.K != 0 else abs(self.gap)

    @property
    def gap_within_tolerance(self) -> bool:
        return self.gap >= -2.0 * self.grid_tol

    @property
    def is_permutation(self) -> bool:
        return self.plan.is_permutation

    def summary(self) -> dict:
        mp = self.plan.monge_map
        return {
            "K": self.K,
            "E_best": self.E_best,
            "gap": self.gap,
            "relative_gap": self.relative_gap,
            "grid_tol": self.grid_tol,
            "gap_within_tolerance": self.gap_within_tolerance,
            "best_seed": self.best_seed,
            "E_by_seed": dict(self.E_by_seed),
            "is_permutation": self.is_permutation,
            "monge": {"M": self.K, "map": mp.tolist()} if mp is not None else "no deterministic map at this resolution",
            "heuristic_E": True,
        }


def duality_gap(
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    P: PressureSpec,
    T: float,
    grid: Grid,
    seed: int = 0,
    n_random: int = 2,
) -> DualityReport:
    """K from the exact LP against the best E over seeded reversible pairs."""
    cost = cost_matrix(mu0, mu1, P, 0.0, T)
    plan, duals = solve_kantorovich(cost, mu0, mu1)
    K = plan.value
    rng = np.random.default_rng(seed)
    seeds = {"dual": dual_seed(grid, centered_duals(plan, duals), mu1, P, T), "zero": np.zeros(grid.size)}
    for r in range(n_random):
        seeds[f"fourier{r}"] = fourier_seed(grid, rng)
    pairs, E = {}, {}
    for name, vals in seeds.items():
        pair = make_reversible_pair(GridFunction(grid, vals, 0.0), P, T)
        pairs[name] = pair
        E[name] = euler_value(pair, mu0, mu1)
    best = max(E, key=lambda s: E[s])
    return DualityReport(K, E[best], K - E[best], best, E, plan, duals, pairs[best], pairs, grid_tol(grid))
