import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize, special

from torusot.action import Path
from torusot.dynamic_norm import (
    G,
    G_unit,
    OrbitMeasure,
    check_omega,
    conjugate_F,
    default_family,
    h2_norm_orbits,
    holder_check,
    mollifier,
    rayleigh_lower_bound,
    regularized_dual_eval,
    single_atom_check,
    sphere_area,
    tube_energy_constant,
    tube_measure_build,
)
from torusot.errors import ConfigError, InvalidMeasure
from torusot.flow import build_measure_path
from torusot.hj import SpaceTimeField, grid_tol
from torusot.pressure import PressureSpec, zero_pressure
from torusot.torus import make_grid
from torusot.transport import DiscreteMeasure, duality_gap

T = np.linspace(0.0, 1.0, 4001)
FAMILY = default_family(1)


def line(x0, speed):
    return lambda t: x0 + speed * t


def orbit_measure(fns, weights):
    return OrbitMeasure.from_functions(fns, weights, samples=4001)


def test_h2_examples():
    assert h2_norm_orbits(orbit_measure([line(0.3, 0.0)], [1.0])) == pytest.approx(0.0, abs=1e-12)
    assert h2_norm_orbits(orbit_measure([line(0.0, 0.25)], [1.0])) == pytest.approx(0.25, abs=1e-12)
    two = orbit_measure([line(0.0, 0.2), line(0.5, 0.4)], [0.5, 0.5])
    assert h2_norm_orbits(two) == pytest.approx(math.sqrt(0.1), abs=1e-12)


def test_orbit_measure_rejects_empty():
    with pytest.raises(InvalidMeasure):
        OrbitMeasure(T, np.zeros((0, T.size, 1)), np.zeros(0))


def test_rayleigh_stationary_is_zero():
    assert rayleigh_lower_bound(orbit_measure([line(0.3, 0.0)], [1.0]), FAMILY) <= 1e-12


def test_rayleigh_straight_orbit_close_to_h2():
    mu = orbit_measure([line(0.1, 0.25)], [1.0])
    lb = rayleigh_lower_bound(mu, FAMILY)
    h2 = h2_norm_orbits(mu) ** 2
    assert lb <= h2 + 1e-8
    assert lb >= 0.9 * h2


def test_rayleigh_crossing_orbits_below_h2():
    mu = orbit_measure([line(0.2, 0.3), line(0.5, -0.3)], [0.5, 0.5])
    assert rayleigh_lower_bound(mu, FAMILY) <= h2_norm_orbits(mu) ** 2 + 1e-8


@st.composite
def smooth_orbits(draw):
    J = draw(st.integers(1, 3))
    coef = draw(st.lists(st.floats(-0.2, 0.2), min_size=3 * J, max_size=3 * J))
    w = np.array(draw(st.lists(st.floats(0.1, 1.0), min_size=J, max_size=J)))
    fns = [
        (lambda a, b, c: (lambda t: a + b * t + c * np.sin(np.pi * t)))(coef[3 * j] + 0.5, coef[3 * j + 1], coef[3 * j + 2])
        for j in range(J)
    ]
    return orbit_measure(fns, w / w.sum())


@given(smooth_orbits())
def test_rayleigh_is_a_lower_bound(mu):
    h2 = h2_norm_orbits(mu) ** 2
    assert rayleigh_lower_bound(mu, FAMILY) <= h2 + 1e-8
    assert rayleigh_lower_bound(mu, FAMILY, span=False) <= h2 + 1e-8


@given(smooth_orbits())
def test_family_enlargement_is_monotone(mu):
    small, big = default_family(1, size=16), default_family(1, size=64)
    assert rayleigh_lower_bound(mu, big, span=False) >= rayleigh_lower_bound(mu, small, span=False)
    assert rayleigh_lower_bound(mu, big) >= rayleigh_lower_bound(mu, small) * (1 - 1e-9) - 1e-12


@given(st.floats(0, 1), st.floats(0, 1))
def test_single_atom_h2_equals_w2(x0, x1):
    h2, w2 = single_atom_check([x0], [x1])
    assert h2 == pytest.approx(w2, abs=1e-12)


def test_mollifier_normalized():
    for n in (1, 2, 3):
        val, _ = integrate.quad(lambda r: r ** (n - 1) * float(mollifier(r, n)), 0, 1)
        assert sphere_area(n) * val == pytest.approx(1.0, abs=1e-12)


def core(speed=0.3):
    return Path.straight([0.2], [0.2 + speed], 0.0, 1.0, 65)


@given(st.floats(1.0, 8.0), st.floats(0.01, 0.99))
def test_tube_slice_mass(alpha, t):
    assert tube_measure_build(core(), alpha).mass(t) == pytest.approx(1.0, abs=1e-6)


def test_tube_support_radius():
    tube = tube_measure_build(core(), 4.0)
    for t in (0.1, 0.3, 0.5, 0.8):
        x = tube._core(t)[0][0] + 1.01 * tube.support_radius(t)
        assert tube.density(x[None], t)[0] == 0.0
        assert tube.support_radius(t) <= 0.5 / 4.0


@pytest.mark.parametrize("alpha", [0.0, -1.0, float("nan")])
def test_tube_rejects_bad_width(alpha):
    with pytest.raises(ConfigError):
        tube_measure_build(core(), alpha)


def test_tube_energy_bound_and_constant():
    C1 = tube_energy_constant(1)
    fitted = []
    for alpha in (1.0, 2.0, 4.0, 8.0):
        e = tube_measure_build(core(), alpha).energy()
        assert e <= 0.3**2 + C1 * alpha**-2 + 1e-9
        fitted.append((e - 0.3**2) * alpha**2)
    assert np.ptp(fitted) <= 1e-9 * max(fitted)


def test_tube_lp_scaling():
    alphas = np.array([1.0, 2.0, 4.0, 8.0])
    norms = [tube_measure_build(core(), a).lp_norm(1.5) for a in alphas]
    slope = np.polyfit(np.log(alphas), np.log(norms), 1)[0]
    assert abs(slope - 1.0 / 3.0) <= 0.1 / 3.0


def test_tube_weak_residual():
    for alpha in (1.0, 4.0):
        assert tube_measure_build(core(), alpha).weak_residual(FAMILY) <= 1e-4


def test_holder_examples():
    still = orbit_measure([line(0.4, 0.0)], [1.0])
    assert holder_check(still).sup_ratio == 0.0
    moving = orbit_measure([line(0.1, 0.2)], [1.0])
    coarse, fine = holder_check(moving, levels=2), holder_check(moving, levels=5)
    # W1 = c |s - t|, so the ratio is c |s - t|^(1/2), largest on the full interval
    assert coarse.sup_ratio == pytest.approx(0.2, abs=1e-9)
    assert fine.sup_ratio == pytest.approx(0.2, abs=1e-9)


def test_holder_two_atom_path(two_atoms):
    rep = duality_gap(*two_atoms, zero_pressure(1), 1.0, make_grid(1, 64, 1.0, 4))
    path = build_measure_path(rep.plan, zero_pressure(1))
    ratios = [holder_check(path, levels=L) for L in (2, 3, 4)]
    for r in ratios:
        assert r.finite and r.sup_ratio <= r.bound + 1e-9
    assert abs(ratios[-1].sup_ratio - ratios[0].sup_ratio) <= 1e-9


def beta_G1(omega, n):
    q = omega / (omega - 1.0)
    return (omega - 1.0) * omega**-q * sphere_area(n) * 2 ** (n / 2 - 1) * special.beta(n / 2, q + 1)


@pytest.mark.parametrize("omega, n", [(1.25, 1), (1.4, 1), (1.2, 2), (1.1, 3)])
def test_G_matches_beta_oracle(omega, n):
    assert G_unit(omega, n) == pytest.approx(beta_G1(omega, n), rel=1e-8)
    expo = omega / (omega - 1) + n / 2
    for s in (0.3, 2.0):
        assert float(G(s, omega, n)) == pytest.approx(beta_G1(omega, n) * s**expo, rel=1e-8)
    assert float(G(-0.5, omega, n)) == 0.0


def test_G_two_dimensional_direct_integral():
    omega = 1.2
    val, _ = integrate.dblquad(
        lambda y, x: float(conjugate_F(0.7 - 0.5 * (x * x + y * y), omega)), -2, 2, -2, 2, epsabs=1e-12
    )
    assert float(G(0.7, omega, 2)) == pytest.approx(val, rel=1e-6)


@given(st.floats(-2, 5), st.floats(1.05, 1.45))
def test_conjugate_matches_numeric_sup(lam, omega):
    # search over q = e^s, the maximizer can be far out when omega is near 1
    res = optimize.minimize_scalar(lambda s: -(lam * math.exp(s) - math.exp(s * omega)), bounds=(-40, 40), method="bounded", options={"xatol": 1e-12})
    sup = max(0.0, -res.fun)
    assert float(conjugate_F(lam, omega)) == pytest.approx(sup, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("omega", [1.0, 1.5, 2.0])
def test_omega_range(omega):
    with pytest.raises(ConfigError):
        check_omega(omega, 1)


def field(grid, fn):
    X, Tm = grid.points[None, :, 0], grid.times[:, None]
    return SpaceTimeField(grid, fn(X, Tm) + 0 * X + 0 * Tm, "forward")


GRID = make_grid(1, 64, 1.0, 8)


def test_subsolution_field_gives_boundary_pairing(two_atoms):
    mu0, mu1 = two_atoms
    phi = field(GRID, lambda x, t: -t)
    pairing = -1.0
    assert regularized_dual_eval(phi, zero_pressure(1), 0.1, 1.25, mu0, mu1) == pytest.approx(pairing, abs=1e-14)


@given(st.floats(-3, 3))
def test_psi_invariant_under_constants(c):
    mu0 = DiscreteMeasure.create([[0.1], [0.6]], [0.3, 0.7])
    mu1 = DiscreteMeasure.create([[0.35], [0.8]], [0.5, 0.5])
    base = field(GRID, lambda x, t: 0.1 * np.sin(2 * np.pi * x) * t + 0.02 * t)
    shifted = SpaceTimeField(GRID, base.values + c, "forward")
    P = zero_pressure(1)
    assert regularized_dual_eval(shifted, P, 0.1, 1.25, mu0, mu1) == pytest.approx(
        regularized_dual_eval(base, P, 0.1, 1.25, mu0, mu1), abs=1e-12
    )


def test_psi_monotone_in_residual(two_atoms):
    mu0, mu1 = two_atoms
    phi = field(GRID, lambda x, t: 0.0 * x)
    vals = [regularized_dual_eval(phi, PressureSpec(1, (), -r), 0.1, 1.25, mu0, mu1) for r in (0.4, 0.2, 0.1, 0.01, 1e-4)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(0.0, abs=1e-9)


def test_psi_bounded_by_kantorovich(two_atoms):
    grid = make_grid(1, 512, 1.0, 8)
    rep = duality_gap(*two_atoms, zero_pressure(1), 1.0, grid)
    for eps in (1e-1, 1e-2):
        psi = regularized_dual_eval(rep.pairs["dual"].upper, zero_pressure(1), eps, 1.25, *two_atoms)
        assert psi <= rep.K + 2 * grid_tol(grid)
