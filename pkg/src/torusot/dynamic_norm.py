"""Kinetic norms of measure-valued orbits, their dual lower bounds, tube measures, and the
epsilon-regularized dual functional."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .action import Path
from .errors import ConfigError, DegenerateFamily, InvalidMeasure
from .hj import SpaceTimeField
from .pressure import PressureSpec
from .torus import axis_differences, interpolate_periodic
from .transport import DiscreteMeasure, wasserstein


def sphere_area(n: int) -> float:
    """|S^{n-1}|: 2 for n = 1, 2 pi for n = 2, 4 pi for n = 3."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True, eq=False)
class OrbitMeasure:
    """sum_j beta_j delta(x - x_j(t)) with constant weights on a shared time axis."""

    times: np.ndarray  # (N,)
    orbits: np.ndarray  # (J, N, n) lifted coordinates
    weights: np.ndarray  # (J,)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        X = np.asarray(self.orbits, dtype=float)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.shape[0] == 0 or w.size == 0:
            raise InvalidMeasure("an orbit measure needs at least one orbit")
        if X.shape[:2] != (w.size, t.size) or t.size < 3:
            raise InvalidMeasure("orbits must share the time axis (>= 3 samples) and carry one weight each")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12 or not np.all(np.diff(t) > 0):
            raise InvalidMeasure("weights must be positive and sum to 1; times increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "orbits", X)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.orbits.shape[2]

    @classmethod
    def from_paths(cls, paths: list[Path], weights) -> "OrbitMeasure":
        t = paths[0].times
        for p in paths[1:]:
            if p.node_count != t.size or not np.allclose(p.times, t):
                raise InvalidMeasure("paths must share the time axis")
        return cls(t, np.stack([p.nodes for p in paths]), np.asarray(weights, dtype=float))

    @classmethod
    def from_functions(cls, fns, weights, t0: float = 0.0, t1: float = 1.0, samples: int = 20001) -> "OrbitMeasure":
        t = np.linspace(t0, t1, samples)
        X = np.stack([np.asarray(f(t), dtype=float).reshape(samples, -1) for f in fns])
        return cls(t, X, np.asarray(weights, dtype=float))

    def velocities(self) -> np.ndarray:
        return np.gradient(self.orbits, self.times, axis=1, edge_order=2)

    def positions(self, t: float) -> np.ndarray:
        return np.stack(
            [np.stack([np.interp(t, self.times, X[:, d]) for d in range(self.n)]) for X in self.orbits]
        )

    def slice(self, t: float) -> DiscreteMeasure:
        return DiscreteMeasure.create(self.positions(t), self.weights)


def h2_norm_orbits(mu: OrbitMeasure) -> float:
    """sqrt(sum_j beta_j int |x_j'|^2 dt), derivatives by centered differences."""
    speed2 = np.sum(mu.velocities() ** 2, axis=-1)  # (J, N)
    per = integrate.trapezoid(speed2, mu.times, axis=1)
    return float(np.sqrt(np.dot(mu.weights, per)))


def _plateau(t, t0: float, t1: float, width: float):
    """C^2 bump: quintic ramps of the given width at both ends, 1 in between.

    The ramp derivative vanishes to second order at both ends, which keeps trapezoid
    sums along orbits accurate to O(h^4) at the ramp ends.
    """

    def step(u):
        u = np.clip(u, 0.0, 1.0)
        return u**3 * (10.0 - 15.0 * u + 6.0 * u * u), 30.0 * u * u * (1.0 - u) ** 2

    a, da = step((t - t0) / width)
    b, db = step((t1 - t) / width)
    return a * b, (da * b - a * db) / width


@dataclass(frozen=True)
class TestFunctionFamily:
    """Members phi(x, t) = plateau_w(t) tau(t) s(x).

    w runs over `widths`, tau over time modes cos/sin(pi j (t - t0) / (t1 - t0)) and s over
    linear coordinates or spatial Fourier modes.  Linear factors are taken in lifted
    coordinates, i.e. along unwrapped orbits.
    """

    n: int
    t0: float
    t1: float
    widths: tuple[float, ...]
    time_modes: tuple[tuple[int, str], ...]  # (j, "cos" | "sin"); (0, "cos") is the constant
    linear: tuple[tuple[float, ...], ...]  # directions e with s(x) = e . x
    fourier: tuple[tuple[tuple[int, ...], str], ...]  # (k, "cos" | "sin")

    @property
    def size(self) -> int:
        return len(self.widths) * len(self.time_modes) * (len(self.linear) + len(self.fourier))

    @property
    def breakpoints(self) -> np.ndarray:
        """Times where some member loses smoothness (ends of the ramps)."""
        L = self.t1 - self.t0
        pts = [self.t0, self.t1]
        for w in self.widths:
            pts += [self.t0 + w * L, self.t1 - w * L]
        return np.unique(np.clip(pts, self.t0, self.t1))

    def _time_factors(self, t):
        L = self.t1 - self.t0
        u = np.pi * (np.asarray(t, dtype=float) - self.t0) / L
        vals, ders = [], []
        for j, kind in self.time_modes:
            if kind == "cos":
                vals.append(np.cos(j * u))
                ders.append(-np.pi * j / L * np.sin(j * u))
            else:
                vals.append(np.sin(j * u))
                ders.append(np.pi * j / L * np.cos(j * u))
        return vals, ders

    def _space_factors(self, x):
        vals, grads = [], []
        for e in self.linear:
            e = np.asarray(e, dtype=float)
            vals.append(x @ e)
            grads.append(np.broadcast_to(e, x.shape))
        for k, kind in self.fourier:
            k = np.asarray(k, dtype=float)
            th = 2.0 * np.pi * (x @ k)
            if kind == "cos":
                vals.append(np.cos(th))
                grads.append(-2.0 * np.pi * np.sin(th)[..., None] * k)
            else:
                vals.append(np.sin(th))
                grads.append(2.0 * np.pi * np.cos(th)[..., None] * k)
        return vals, grads

    def evaluate(self, x: np.ndarray, t: np.ndarray):
        """phi_t and grad phi of every member at samples x (..., n), t (...): (M, ...), (M, ..., n)."""
        x = np.asarray(x, dtype=float)
        s_vals, s_grads = self._space_factors(x)
        tau, dtau = self._time_factors(t)
        phi_t, grad = [], []
        for w in self.widths:
            b, db = _plateau(t, self.t0, self.t1, w * (self.t1 - self.t0))
            for c, dc in zip(tau, dtau):
                a, da = b * c, db * c + b * dc
                for s, g in zip(s_vals, s_grads):
                    phi_t.append(da * s)
                    grad.append(a[..., None] * g)
        return np.stack(phi_t), np.stack(grad)


def default_family(n: int, t0: float = 0.0, t1: float = 1.0, size: int = 64) -> TestFunctionFamily:
    """`size` members: 4 spatial factors (linear coordinates first, then low Fourier modes) times time modes."""
    n_space = 4
    linear = [tuple(float(i == d) for i in range(n)) for d in range(min(n, n_space))]
    fourier: list[tuple[tuple[int, ...], str]] = []
    d = 0
    while len(linear) + len(fourier) < n_space:
        k = tuple(int(i == d % n) * (1 + d // (2 * n)) for i in range(n))
        fourier.append((k, "cos" if d % 2 == 0 else "sin"))
        d += 1
    n_time = max(1, size // n_space)
    time_modes = [(0, "cos")]
    j = 1
    while len(time_modes) < n_time:
        time_modes.append((j, "cos"))
        if len(time_modes) < n_time:
            time_modes.append((j, "sin"))
        j += 1
    return TestFunctionFamily(n, t0, t1, (0.02,), tuple(time_modes), tuple(linear), tuple(fourier))


def _moments(mu: OrbitMeasure, family: TestFunctionFamily):
    """Per-member numerators int phi_t dmu and Gram matrix int grad phi_a . grad phi_b dmu."""
    t = mu.times
    phi_t, grad = family.evaluate(mu.orbits, np.broadcast_to(t, mu.orbits.shape[:2]))
    num = integrate.trapezoid(phi_t, t, axis=-1) @ mu.weights
    gw = grad * np.sqrt(mu.weights)[None, :, None, None]
    # trapezoid weights in time
    tw = np.zeros_like(t)
    dt = np.diff(t)
    tw[:-1] += 0.5 * dt
    tw[1:] += 0.5 * dt
    g = (gw * np.sqrt(tw)[None, None, :, None]).reshape(grad.shape[0], -1)
    return num, g @ g.T


def rayleigh_quotients(mu: OrbitMeasure, family: TestFunctionFamily, min_denominator: float = 1e-14) -> np.ndarray:
    """(int phi_t dmu)^2 / int |grad phi|^2 dmu per member; NaN where the denominator vanishes."""
    num, gram = _moments(mu, family)
    den = np.diag(gram)
    out = np.full(num.shape, np.nan)
    ok = den > min_denominator
    out[ok] = num[ok] ** 2 / den[ok]
    return out


def rayleigh_lower_bound(mu: OrbitMeasure, family: TestFunctionFamily, span: bool = True, rcond: float = 1e-10) -> float:
    """Largest Rayleigh quotient over the family (span=False) or over its linear span.

    The span optimum c = A^+ b is evaluated as the quotient of the combined test function
    sum_a c_a phi_a, so it stays a lower bound on the squared kinetic norm.
    """
    num, gram = _moments(mu, family)
    den = np.diag(gram)
    ok = den > 1e-14
    if not ok.any():
        raise DegenerateFamily("every member has a vanishing gradient along the measure")
    best = float(np.max(num[ok] ** 2 / den[ok]))
    if span:
        b, A = num[ok], gram[np.ix_(ok, ok)]
        c = np.linalg.pinv(A, rcond=rcond, hermitian=True) @ b
        q = float(c @ A @ c)
        if q > 1e-14:
            best = max(best, float(b @ c) ** 2 / q)
    return best


def single_atom_check(x0, x1, T: float = 1.0, samples: int = 1001) -> tuple[float, float]:
    """(h2 norm of the straight orbit x0 -> x1, W2(delta_x0, delta_x1)) with T = 1 they coincide."""
    d0 = DiscreteMeasure.dirac(x0)
    d1 = DiscreteMeasure.dirac(x1)
    disp = np.atleast_1d(np.asarray(x1, float)) - np.atleast_1d(np.asarray(x0, float))
    disp = disp - np.round(disp)
    path = Path.straight(np.atleast_1d(x0), np.atleast_1d(x0) + disp, 0.0, T, samples)
    mu = OrbitMeasure.from_paths([path], [1.0])
    return h2_norm_orbits(mu) * math.sqrt(T), wasserstein(d0, d1, 2.0)


# mollifier (1 - r^2)^4 on [0, 1], normalized so that |S^{n-1}| int r^{n-1} rho_1 = 1


@lru_cache(maxsize=None)
def _bump_moment(k: float) -> float:
    """int_0^1 r^k (1 - r^2)^4 dr."""
    return 0.5 * special.beta((k + 1.0) / 2.0, 5.0)


def mollifier_norm(n: int) -> float:
    return 1.0 / (sphere_area(n) * _bump_moment(n - 1))


def mollifier(r, n: int):
    r = np.asarray(r, dtype=float)
    return np.where(r < 1.0, mollifier_norm(n) * np.clip(1.0 - r * r, 0.0, None) ** 4, 0.0)


def mollifier_moment(k: float, n: int) -> float:
    """M_k = int r^k rho_1(r) dr."""
    return mollifier_norm(n) * _bump_moment(k)


@dataclass(frozen=True, eq=False)
class TubeMeasure:
    """Density spreading from x(t0), following the core path, and refocusing at x(t1)."""

    path: Path
    alpha: float

    @property
    def n(self) -> int:
        return self.path.nodes.shape[1]

    @property
    def t0(self) -> float:
        return self.path.t_start

    @property
    def t1(self) -> float:
        return self.path.t_end

    def _core(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pos = self.path.position(t)
        seg = np.clip(np.searchsorted(self.path.times, t, side="right") - 1, 0, self.path.node_count - 2)
        vel = (self.path.nodes[seg + 1] - self.path.nodes[seg]) / self.path.delta
        return pos, vel

    def _scale(self, t):
        t = np.asarray(t, dtype=float)
        mid = 0.5 * (self.t0 + self.t1)
        return np.where(t <= mid, t - self.t0, self.t1 - t)

    def support_radius(self, t) -> np.ndarray:
        return self._scale(t) / self.alpha

    def density(self, x, t) -> np.ndarray:
        """rho(x, t) for lifted points x (..., n) and one time t."""
        x = np.asarray(x, dtype=float)
        pos, _ = self._core(t)
        tau = float(self._scale(t))
        if tau <= 0:
            raise ConfigError("density is a point mass at the end times")
        r = np.linalg.norm(x - pos[0], axis=-1) / tau
        return self.alpha**self.n * mollifier(self.alpha * r, self.n) / tau**self.n

    def velocity(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pos, vel = self._core(t)
        mid = 0.5 * (self.t0 + self.t1)
        tau = float(self._scale(t))
        sign = 1.0 if t <= mid else -1.0
        return sign * (x - pos[0]) / tau + vel[0]

    def _slice_quadrature(self, t: float, nodes: int):
        """Gauss-Legendre nodes (B, n) and weights over the support at time t.

        In 1-D the interval is split at the centre, where the radial profile has a kink
        in its derivative; in higher dimensions a tensor rule covers the bounding box.
        """
        R = float(self.support_radius(t))
        g, w = np.polynomial.legendre.leggauss(nodes)
        pos, _ = self._core(t)
        if self.n == 1:
            half = 0.5 * R * (g + 1.0)
            x = np.concatenate([pos[0, 0] - half, pos[0, 0] + half])[:, None]
            return x, np.concatenate([0.5 * R * w, 0.5 * R * w])
        axes = np.meshgrid(*([R * g] * self.n), indexing="ij")
        wts = np.meshgrid(*([R * w] * self.n), indexing="ij")
        x = np.stack(axes, -1).reshape(-1, self.n) + pos[0]
        return x, np.prod(np.stack(wts, -1).reshape(-1, self.n), axis=-1)

    def _slice_integral(self, t: float, fn, nodes: int) -> float:
        x, w = self._slice_quadrature(t, nodes)
        return float(np.dot(w, fn(x)))

    def mass(self, t: float, nodes: int = 64) -> float:
        return self._slice_integral(t, lambda x: self.density(x, t), nodes)

    def slice_energy(self, t: float, nodes: int = 64) -> float:
        return self._slice_integral(t, lambda x: np.sum(self.velocity(x, t) ** 2, -1) * self.density(x, t), nodes)

    def energy(self, nodes: int = 64, time_nodes: int = 64) -> float:
        """int int |v|^2 rho dx dt, each half interval by Gauss-Legendre in time."""
        return self._time_integral(self.slice_energy, nodes, time_nodes)

    def lp_norm(self, p: float, nodes: int = 64, time_nodes: int = 64) -> float:
        def slice_p(t, nodes):
            return self._slice_integral(t, lambda x: self.density(x, t) ** p, nodes)

        # the slice integral behaves like tau^{n(1-p)}: substitute tau = s^2 on each half
        mid = 0.5 * (self.t0 + self.t1)
        half = mid - self.t0
        g, w = np.polynomial.legendre.leggauss(time_nodes)
        s = 0.5 * math.sqrt(half) * (g + 1.0)
        ws = 0.5 * math.sqrt(half) * w
        total = 0.0
        for si, wi in zip(s, ws):
            tau = si * si
            total += wi * 2.0 * si * (slice_p(self.t0 + tau, nodes) + slice_p(self.t1 - tau, nodes))
        return total ** (1.0 / p)

    def _time_integral(self, fn, nodes: int, time_nodes: int) -> float:
        mid = 0.5 * (self.t0 + self.t1)
        g, w = np.polynomial.legendre.leggauss(time_nodes)
        total = 0.0
        for a, b in ((self.t0, mid), (mid, self.t1)):
            ts = 0.5 * (b - a) * (g + 1.0) + a
            total += 0.5 * (b - a) * sum(wi * fn(float(ti), nodes) for ti, wi in zip(ts, w))
        return total

    def weak_residual(self, family: TestFunctionFamily, nodes: int = 32, time_nodes: int = 24) -> float:
        """max over members of |int int (phi_t + v . grad phi) rho dx dt|."""

        def member_terms(t, nodes):
            x, w = self._slice_quadrature(t, nodes)
            pt, gr = family.evaluate(x, np.full(x.shape[0], t))
            integrand = pt + np.sum(gr * self.velocity(x, t)[None], -1)
            return (integrand * self.density(x, t)) @ w

        mid = 0.5 * (self.t0 + self.t1)
        cuts = np.unique(np.concatenate([[self.t0, mid, self.t1], family.breakpoints]))
        cuts = cuts[(cuts >= self.t0) & (cuts <= self.t1)]
        g, w = np.polynomial.legendre.leggauss(time_nodes)
        total = np.zeros(family.size)
        for a, b in zip(cuts[:-1], cuts[1:]):
            ts = 0.5 * (b - a) * (g + 1.0) + a
            for ti, wi in zip(ts, w):
                total += 0.5 * (b - a) * wi * member_terms(float(ti), nodes)
        return float(np.max(np.abs(total)))


def tube_measure_build(path: Path, alpha: float) -> TubeMeasure:
    if not (alpha > 0 and np.isfinite(alpha)):
        raise ConfigError(f"width parameter must be positive, got {alpha}")
    return TubeMeasure(path, float(alpha))


def tube_energy_constant(n: int) -> float:
    """Per-time energy excess times alpha^2: |S^{n-1}| M_{n+1}."""
    return sphere_area(n) * mollifier_moment(n + 1, n)


@dataclass(frozen=True)
class HolderReport:
    sup_ratio: float
    bound: float
    pairs: int

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.sup_ratio))


def holder_check(mu, levels: int = 4, t0: float | None = None, t1: float | None = None, bound: float | None = None) -> HolderReport:
    """sup of W1(mu(s), mu(t)) / |s - t|^(1/2) over dyadic times of the given depth.

    `mu` is anything with slice(t) -> DiscreteMeasure: an OrbitMeasure or a MeasurePath.
    """
    if t0 is None:
        t0 = float(mu.times[0]) if hasattr(mu, "times") else mu.t_start
    if t1 is None:
        t1 = float(mu.times[-1]) if hasattr(mu, "times") else mu.t_end
    ts = t0 + (t1 - t0) * np.arange(2**levels + 1) / 2**levels
    slices = [mu.slice(float(t)) for t in ts]
    best = 0.0
    count = 0
    for i in range(len(ts)):
        for j in range(i + 1, len(ts)):
            w = wasserstein(slices[i], slices[j], 1.0)
            best = max(best, w / math.sqrt(ts[j] - ts[i]))
            count += 1
    if bound is None:
        if isinstance(mu, OrbitMeasure):
            bound = h2_norm_orbits(mu)
        elif hasattr(mu, "orbits") and hasattr(mu, "masses"):
            bound = h2_norm_orbits(OrbitMeasure.from_paths(list(mu.orbits), mu.masses))
        else:
            bound = float("inf")
    return HolderReport(best, bound, count)


# epsilon-regularized dual with F(q) = q^omega


def check_omega(omega: float, n: int) -> None:
    hi = 1.0 + 1.0 / (n + 1.0)
    if not (1.0 < omega < hi):
        raise ConfigError(f"omega must lie in (1, {hi}) for n = {n}, got {omega}")


def conjugate_F(lam, omega: float):
    """Legendre conjugate of q^omega (q >= 0): (omega - 1) (lam / omega)^(omega / (omega - 1)), 0 for lam <= 0."""
    lam = np.asarray(lam, dtype=float)
    q = omega / (omega - 1.0)
    return np.where(lam > 0, (omega - 1.0) * (np.maximum(lam, 0.0) / omega) ** q, 0.0)


@lru_cache(maxsize=None)
def G_unit(omega: float, n: int) -> float:
    """G(1) = |S^{n-1}| int_0^sqrt2 r^{n-1} F*(1 - r^2 / 2) dr by adaptive quadrature."""
    val, _ = integrate.quad(
        lambda r: r ** (n - 1) * float(conjugate_F(1.0 - 0.5 * r * r, omega)),
        0.0,
        math.sqrt(2.0),
        epsabs=0.0,
        epsrel=1e-10,
        limit=200,
    )
    return sphere_area(n) * val


def G(s, omega: float, n: int):
    """int_{R^n} F*(s - |v|^2/2) dv = G(1) s^(omega/(omega-1) + n/2) for s > 0, else 0."""
    check_omega(omega, n)
    s = np.asarray(s, dtype=float)
    expo = omega / (omega - 1.0) + n / 2.0
    return np.where(s > 0, G_unit(omega, n) * np.maximum(s, 0.0) ** expo, 0.0)


def hj_residual_field(phi: SpaceTimeField, P: PressureSpec) -> np.ndarray:
    """phi_t + |grad phi|^2 / 2 - P on every node (K + 1, size); centered differences."""
    grid = phi.grid
    vals = phi.values
    dt = np.gradient(vals, grid.times, axis=0, edge_order=2)
    out = np.empty_like(vals)
    for k in range(grid.K + 1):
        fwd, bwd = axis_differences(vals[k], grid)
        grad = 0.5 * (fwd + bwd)
        out[k] = dt[k] + 0.5 * np.sum(grad**2, -1) - P.value(grid.points, grid.times[k])
    return out


def regularized_dual_eval(
    phi: SpaceTimeField,
    P: PressureSpec,
    eps: float,
    omega: float,
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
) -> float:
    grid = phi.grid
    check_omega(omega, grid.n)
    if not eps > 0:
        raise ConfigError(f"epsilon must be positive, got {eps}")
    res = hj_residual_field(phi, P)
    g = G(res / eps, omega, grid.n)
    space = g.mean(axis=1)  # torus volume 1
    penalty = eps ** (1.0 + grid.n / 2.0) * integrate.trapezoid(space, grid.times)
    end = interpolate_periodic(phi.values[-1], grid, mu1.points)
    start = interpolate_periodic(phi.values[0], grid, mu0.points)
    return float(-penalty + np.dot(mu1.weights, end) - np.dot(mu0.weights, start))
