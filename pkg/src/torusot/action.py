"""Action J_P(x, y, t1, t2) by direct minimization over discretized orbits.

The discrete action of a path with nodes x_0..x_{N-1} at uniform step d is

    sum_k |x_{k+1} - x_k|^2 / (2 d) + d * (P(x_k, t_k) + P(x_{k+1}, t_{k+1})) / 2,

i.e. kinetic energy per segment plus the segment average of the pressure.
Its stationarity condition is exactly the discrete Euler-Lagrange equation
(x_{k+1} - 2 x_k + x_{k-1}) / d^2 = grad P(x_k, t_k), so the reported residual
is a true certificate of the computed minimizer.

All minimizations run batched: many (x, y) pairs are solved at once with
Newton steps on the block-tridiagonal Hessian and a backtracking line search.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidPath, OptimizationFailed
from .pressure import PressureSpec
from .torus import Grid, axis_differences, shift_window as default_window, wrap

DEFAULT_NODES = 65
EL_TOL = 1e-6
_ARMIJO = 1e-4
_CHUNK = 400_000  # max path-node entries per Newton batch


@dataclass(frozen=True, eq=False)
class Path:
    t_start: float
    t_end: float
    nodes: np.ndarray  # (N, n) lifted coordinates

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        object.__setattr__(self, "nodes", nodes)
        if nodes.shape[0] < 2:
            raise InvalidPath("a path needs at least two nodes")
        if not (np.isfinite(self.t_start) and np.isfinite(self.t_end)) or self.t_end <= self.t_start:
            raise InvalidPath(f"degenerate time interval [{self.t_start}, {self.t_end}]")
        if not np.all(np.isfinite(nodes)):
            raise InvalidPath("non-finite path node")

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def delta(self) -> float:
        return (self.t_end - self.t_start) / (self.node_count - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.node_count)

    def position(self, t) -> np.ndarray:
        """Piecewise-linear position at times t (array), shape (len(t), n)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.times, self.nodes[:, d]) for d in range(self.nodes.shape[1])], -1)

    @classmethod
    def straight(cls, x, y, t1: float, t2: float, node_count: int = DEFAULT_NODES) -> "Path":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        s = np.linspace(0.0, 1.0, node_count)[:, None]
        return cls(t1, t2, x + s * (y - x))


@dataclass(frozen=True, eq=False)
class ActionResult:
    value: float
    path: Path
    el_residual: float
    shift: np.ndarray


def _trap_weights(N: int) -> np.ndarray:
    w = np.ones(N)
    w[0] = w[-1] = 0.5
    return w


def _path_values(X: np.ndarray, times: np.ndarray, P: PressureSpec) -> np.ndarray:
    """Discrete action of a batch of paths X (B, N, n)."""
    d = times[1] - times[0]
    kin = np.sum(np.diff(X, axis=1) ** 2, axis=(1, 2)) / (2.0 * d)
    pot = d * (P.value(X, times[None, :]) @ _trap_weights(len(times)))
    return kin + pot


def discrete_action(path: Path, P: PressureSpec) -> float:
    if path.delta <= 0:
        raise InvalidPath("non-positive step")
    return float(_path_values(path.nodes[None], path.times, P)[0])


def _gradient(X, times, P):
    d = times[1] - times[0]
    Z = X[:, 1:-1]
    g = (2.0 * Z - X[:, :-2] - X[:, 2:]) / d
    if not P.is_spatially_constant:
        g = g + d * P.gradient(Z, times[None, 1:-1])
    return g


def _block_tridiag_solve(diag: np.ndarray, c: float, rhs: np.ndarray):
    """Solve A z = rhs, A block tridiagonal with diagonal blocks diag (B, L, n, n) and
    off-diagonal blocks c*I.  Returns (z, positive_definite flags (B,))."""
    B, L, n, _ = diag.shape
    inv = np.empty_like(diag)
    y = np.empty_like(rhs)
    pd = np.ones(B, dtype=bool)
    Dk = diag[:, 0]
    yk = rhs[:, 0]
    for k in range(L):
        if k > 0:
            Dk = diag[:, k] - c * c * inv[:, k - 1]
            yk = rhs[:, k] - c * np.einsum("bij,bj->bi", inv[:, k - 1], y[:, k - 1])
        if n == 1:
            pd &= Dk[:, 0, 0] > 0
            safe = np.where(Dk[:, 0, 0] == 0, 1.0, Dk[:, 0, 0])
            inv[:, k, 0, 0] = 1.0 / safe
        else:
            Ds = 0.5 * (Dk + np.swapaxes(Dk, 1, 2))
            pd &= np.linalg.eigvalsh(Ds)[:, 0] > 0
            inv[:, k] = np.linalg.pinv(Ds)
        y[:, k] = yk
    z = np.empty_like(rhs)
    z[:, L - 1] = np.einsum("bij,bj->bi", inv[:, L - 1], y[:, L - 1])
    for k in range(L - 2, -1, -1):
        z[:, k] = np.einsum("bij,bj->bi", inv[:, k], y[:, k] - c * z[:, k + 1])
    return z, pd


def _newton_batch(X: np.ndarray, times: np.ndarray, P: PressureSpec, tol: float, max_iters: int):
    """Minimize the discrete action over interior nodes of X (B, N, n) in place.

    Returns (X, values, residuals)."""
    B, N, n = X.shape
    d = times[1] - times[0]
    if N <= 2:
        return X, _path_values(X, times, P), np.zeros(B)
    L = N - 2
    eye = np.eye(n)
    f = _path_values(X, times, P)
    g = _gradient(X, times, P)
    res = np.max(np.abs(g), axis=(1, 2)) / d
    lap_diag = np.broadcast_to((2.0 / d) * eye, (B, L, n, n))
    frozen = np.zeros(B, dtype=bool)
    for _ in range(max_iters):
        active = (res > tol) & ~frozen
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        Xa, ga, fa = X[idx], g[idx], f[idx]
        if P.is_spatially_constant:
            diag = lap_diag[idx]
        else:
            diag = (2.0 / d) * eye + d * P.hessian(Xa[:, 1:-1], times[None, 1:-1])
        step, pd = _block_tridiag_solve(diag, -1.0 / d, -ga)
        slope = np.sum(step * ga, axis=(1, 2))
        bad = ~pd | ~(slope < 0)
        if bad.any():
            alt, _ = _block_tridiag_solve(lap_diag[idx][bad], -1.0 / d, -ga[bad])
            step[bad] = alt
            slope[bad] = np.sum(alt * ga[bad], axis=(1, 2))
        alpha = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        Xnew = Xa.copy()
        fnew = fa.copy()
        for _ls in range(60):
            todo = ~accepted
            if not todo.any():
                break
            trial = Xa[todo].copy()
            trial[:, 1:-1] += alpha[todo, None, None] * step[todo]
            ft = _path_values(trial, times, P)
            # near the optimum the predicted decrease drops below the roundoff of f
            slack = 8.0 * np.finfo(float).eps * (1.0 + np.abs(fa[todo]))
            ok = ft <= fa[todo] + _ARMIJO * alpha[todo] * slope[todo] + slack
            sel = np.nonzero(todo)[0][ok]
            Xnew[sel] = trial[ok]
            fnew[sel] = ft[ok]
            accepted[sel] = True
            alpha[todo & ~accepted] *= 0.5
        # a failed line search means the roundoff floor is reached
        frozen[idx[~accepted]] = True
        X[idx] = Xnew
        f[idx] = fnew
        g[idx] = _gradient(X[idx], times, P)
        res[idx] = np.max(np.abs(g[idx]), axis=(1, 2)) / d
    return X, f, res


def _tolerance(N: int, el_tol: float) -> float:
    # the residual divides by d^2, so its roundoff floor grows like N^2
    return el_tol * max(1.0, ((N - 1) / (DEFAULT_NODES - 1)) ** 2)


def is_certified_convex(P: PressureSpec, t1: float, t2: float, node_count: int) -> bool:
    """True when the discrete action is strictly convex in the interior nodes."""
    if P.is_spatially_constant:
        return True
    times = np.linspace(t1, t2, node_count)
    d = times[1] - times[0]
    lam = float(np.max(P.hessian_bound(times)))
    return lam * d * d < (2.0 - 2.0 * np.cos(np.pi / (node_count - 1))) * (1 - 1e-9)


def _initial_paths(X0, X1, N, restarts, rng):
    s = np.linspace(0.0, 1.0, N)[None, :, None]
    base = X0[:, None, :] + s * (X1 - X0)[:, None, :]
    paths = [base]
    for r in range(restarts):
        amp = rng.normal(scale=0.1, size=(X0.shape[0], 1, X0.shape[1]))
        bump = np.sin(np.pi * (r + 1) * s)
        paths.append(base + amp * bump)
    return paths


def solve_paths(
    X0: np.ndarray,
    X1: np.ndarray,
    t1: float,
    t2: float,
    P: PressureSpec,
    node_count: int = DEFAULT_NODES,
    restarts: int = 3,
    el_tol: float = EL_TOL,
    max_iters: int = 200,
    seed: int = 0,
    strict: bool = True,
):
    """Minimize the action between lifted endpoints X0[b] -> X1[b] (B, n).

    Returns (values (B,), nodes (B, N, n), residuals (B,)). Restarts are skipped
    when the discrete problem is certified convex (the minimizer is then unique).
    """
    if not (t2 > t1):
        raise InvalidPath(f"need t1 < t2, got {t1}, {t2}")
    if node_count < 2:
        raise InvalidPath("node_count must be >= 2")
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    B, n = X0.shape
    N = int(node_count)
    times = np.linspace(t1, t2, N)
    tol = _tolerance(N, el_tol)
    if is_certified_convex(P, t1, t2, N):
        restarts = 0
    rng = np.random.default_rng(seed)
    best_v = np.full(B, np.inf)
    best_r = np.full(B, np.inf)
    best_X = np.empty((B, N, n))
    conv = np.zeros(B, dtype=bool)
    chunk = max(1, _CHUNK // (N * n))
    for init in _initial_paths(X0, X1, N, restarts, rng):
        for lo in range(0, B, chunk):
            sl = slice(lo, lo + chunk)
            Xc, vc, rc = _newton_batch(init[sl].copy(), times, P, tol, max_iters)
            ok = rc <= tol
            # converged attempts compete on value; otherwise keep the smallest residual
            take = np.where(ok, ~conv[sl] | (vc < best_v[sl]), ~conv[sl] & (rc < best_r[sl]))
            best_v[sl] = np.where(take, vc, best_v[sl])
            best_r[sl] = np.where(take, rc, best_r[sl])
            best_X[sl][take] = Xc[take]
            conv[sl] |= ok
    if strict and not conv.all():
        i = int(np.nonzero(~conv)[0][0])
        raise OptimizationFailed("action minimization did not converge", float(best_v[i]), float(best_r[i]))
    return best_v, best_X, best_r


def minimize_action(
    x,
    y,
    t1: float,
    t2: float,
    P: PressureSpec,
    node_count: int = DEFAULT_NODES,
    restarts: int = 3,
    el_tol: float = EL_TOL,
    max_iters: int = 200,
    seed: int = 0,
) -> ActionResult:
    """Minimize the discrete action between fixed lifted endpoints x at t1 and y at t2."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    v, X, r = solve_paths(x[None], y[None], t1, t2, P, node_count, restarts, el_tol, max_iters, seed)
    return ActionResult(float(v[0]), Path(t1, t2, X[0]), float(r[0]), np.zeros(len(x), dtype=int))


def _potential_bounds(P: PressureSpec, t1: float, t2: float, N: int):
    times = np.linspace(t1, t2, N)
    w = _trap_weights(N) * (times[1] - times[0])
    s = P.amplitude_sum(times)
    return float(w @ (P.offset - s)), float(w @ (P.offset + s))


def action_table(
    X: np.ndarray,
    Y: np.ndarray,
    t1: float,
    t2: float,
    P: PressureSpec,
    node_count: int = DEFAULT_NODES,
    shifts: np.ndarray | None = None,
    restarts: int = 3,
    el_tol: float = EL_TOL,
    seed: int = 0,
    return_paths: bool = False,
):
    """J_P between torus points X (A, n) and Y (B, n): minimum over y + q, q in shifts.

    Returns values (A, B) and chosen shifts (A, B, n); with return_paths also the
    optimal node arrays (A, B, N, n).  Shifts whose value bracket cannot beat the
    best bracket of the pair are skipped.
    """
    X = wrap(np.atleast_2d(X))
    Y = wrap(np.atleast_2d(Y))
    A, n = X.shape
    Bn = Y.shape[0]
    q = default_window(n) if shifts is None else np.atleast_2d(np.asarray(shifts, dtype=float))
    dt = t2 - t1
    if not dt > 0:
        raise InvalidPath(f"need t1 < t2, got {t1}, {t2}")
    lo_pot, hi_pot = _potential_bounds(P, t1, t2, node_count)
    disp = Y[None, :, None, :] + q[None, None, :, :] - X[:, None, None, :]  # (A, B, S, n)
    kin = np.sum(disp**2, axis=-1) / (2.0 * dt)
    upper = np.min(kin, axis=-1, keepdims=True) + hi_pot
    keep = kin + lo_pot <= upper + 1e-12
    ia, ib, isq = np.nonzero(keep)
    X0 = X[ia]
    X1 = Y[ib] + q[isq]
    vals, nodes, _ = solve_paths(X0, X1, t1, t2, P, node_count, restarts, el_tol, seed=seed)
    full = np.full(keep.shape, np.inf)
    full[ia, ib, isq] = vals
    # lowest value; ties resolved by window order
    best = np.argmin(full, axis=-1)
    values = np.take_along_axis(full, best[..., None], -1)[..., 0]
    chosen = q[best]
    if not return_paths:
        return values, chosen
    pos = np.full(keep.shape, -1)
    pos[ia, ib, isq] = np.arange(len(ia))
    sel = np.take_along_axis(pos, best[..., None], -1)[..., 0]
    return values, chosen, nodes[sel]


def torus_action(
    x,
    y,
    t1: float,
    t2: float,
    P: PressureSpec,
    shift_window: np.ndarray | None = None,
    node_count: int = DEFAULT_NODES,
    restarts: int = 3,
) -> ActionResult:
    """J_P on the torus: best lift of y over the shift window (default {-1,0,1}^n)."""
    x = wrap(np.atleast_1d(x))
    y = wrap(np.atleast_1d(y))
    vals, sh, nodes = action_table(x[None], y[None], t1, t2, P, node_count, shift_window, restarts, return_paths=True)
    path = Path(t1, t2, nodes[0, 0])
    times = path.times
    g = _gradient(path.nodes[None], times, P)
    res = float(np.max(np.abs(g)) / path.delta) if node_count > 2 else 0.0
    return ActionResult(float(vals[0, 0]), path, res, sh[0, 0].astype(int))


@dataclass(frozen=True, eq=False)
class HJResidual:
    residual: np.ndarray  # absolute residual per grid node
    relative: np.ndarray  # residual / (|J_t| + |grad J|^2/2 + |P|)
    masked: np.ndarray  # True where a kink was detected
    grid: Grid

    @property
    def masked_fraction(self) -> float:
        return float(np.mean(self.masked))

    def pass_fraction(self, rel_tol: float) -> float:
        ok = self.relative[~self.masked] <= rel_tol
        return float(np.mean(ok)) if ok.size else 0.0


def action_hj_residual(
    P: PressureSpec,
    x,
    grid: Grid,
    t1: float,
    t: float,
    kink_tol: float | None = None,
    dt_fd: float | None = None,
    node_count: int = DEFAULT_NODES,
) -> HJResidual:
    """Residual of d/dt J + |grad_y J|^2 / 2 - P(y, t) for J = J_P(x, ., t1, t) on the grid."""
    if not t > t1:
        raise InvalidPath("need t > t1")
    tau = t - t1
    dt_fd = min(1e-3, tau / 10.0) if dt_fd is None else dt_fd
    kink_tol = 4.0 * grid.h / tau if kink_tol is None else kink_tol
    x = wrap(np.atleast_1d(x))
    Y = grid.points
    J = {s: action_table(x[None], Y, t1, t + s * dt_fd, P, node_count)[0][0] for s in (-1, 0, 1)}
    Jt = (J[1] - J[-1]) / (2.0 * dt_fd)
    fwd, bwd = axis_differences(J[0], grid)
    grad = 0.5 * (fwd + bwd)
    masked = np.any(np.abs(fwd - bwd) > kink_tol, axis=-1)
    Py = P.value(Y, t)
    res = np.abs(Jt + 0.5 * np.sum(grad**2, -1) - Py)
    scale = np.abs(Jt) + 0.5 * np.sum(grad**2, -1) + np.abs(Py)
    rel = res / np.maximum(scale, 1e-12)
    return HJResidual(res, rel, masked, grid)
