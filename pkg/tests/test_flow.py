import numpy as np
import pytest

from torusot.action import action_table
from torusot.flow import (
    VelocityField,
    build_measure_path,
    closed_form_map,
    flow_tol,
    integrate_flow,
    lipschitz_extend,
    mask_invariance,
    velocity_agreement,
    velocity_on_k0,
    verify_transport,
)
from torusot.hj import GridFunction, grid_tol, legendre_pair_zero_pressure, make_reversible_pair, masked_gradient
from torusot.pressure import zero_pressure
from torusot.torus import make_grid, min_displacement
from torusot.transport import DiscreteMeasure, centered_duals, cost_matrix, dual_seed, duality_gap, solve_kantorovich

FINE = make_grid(1, 512, 1.0, 8)
MODE_GRID = make_grid(1, 256, 1.0, 8)


@pytest.fixture(scope="module")
def zero_run():
    mu0 = DiscreteMeasure.create([[0.25], [0.5]])
    mu1 = DiscreteMeasure.create([[0.375], [0.75]])
    P = zero_pressure(1)
    rep = duality_gap(mu0, mu1, P, 1.0, FINE)
    pair = rep.pairs["dual"]
    v = lipschitz_extend(velocity_on_k0(pair))
    return P, rep, pair, v, build_measure_path(rep.plan, P)


@pytest.fixture(scope="module")
def mode_run():
    import math

    from torusot.pressure import Amplitude, Mode, PressureSpec

    P = PressureSpec(1, (Mode((1,), Amplitude.cosine(0.1, math.pi)),))
    mu0 = DiscreteMeasure.create([[0.25], [0.5]])
    mu1 = DiscreteMeasure.create([[0.375], [0.75]])
    rep = duality_gap(mu0, mu1, P, 1.0, MODE_GRID)
    pair = rep.pairs["dual"]
    return P, rep, pair, lipschitz_extend(velocity_on_k0(pair)), build_measure_path(rep.plan, P)


def test_zero_velocity_and_identity_flow():
    grid = make_grid(1, 64, 1.0, 4)
    pair = make_reversible_pair(GridFunction(grid, np.zeros(64), 0.0), zero_pressure(1))
    v = velocity_on_k0(pair)
    assert np.all(v.values == 0.0)
    seeds = np.array([[0.1], [0.55], [0.93]])
    fm = integrate_flow(lipschitz_extend(v), seeds, 0.3, 0.8)
    np.testing.assert_array_equal(fm.points, seeds)


def test_extension_full_mask_is_identity():
    grid = make_grid(1, 16, 1.0, 4)
    vals = np.random.default_rng(0).normal(size=(3, 16, 1))
    v = VelocityField(grid, vals, np.ones((3, 16), dtype=bool), 2.0)
    np.testing.assert_array_equal(lipschitz_extend(v).values, vals)


def test_extension_single_point_is_constant():
    grid = make_grid(1, 16, 1.0, 4)
    mask = np.zeros((3, 16), dtype=bool)
    mask[:, 5] = True
    vals = np.zeros((3, 16, 1))
    vals[:, 5, 0] = [0.3, -0.2, 0.7]
    ext = lipschitz_extend(VelocityField(grid, vals, mask, 4.0)).values
    for j, c in enumerate([0.3, -0.2, 0.7]):
        np.testing.assert_allclose(ext[j, :, 0], c)


def test_extension_lipschitz_bound(zero_run, mode_run):
    for _, _, pair, v, _ in (zero_run, mode_run):
        L, h = v.lipschitz, v.grid.h
        for j in range(v.values.shape[0]):
            col = v.values[j, :, 0]
            assert np.max(np.abs(np.roll(col, -1) - col)) / h <= L + 4 * h * L + 1e-9


def test_velocity_matches_legendre_gradient():
    grid = make_grid(1, 256, 1.0, 8)
    phi = GridFunction.from_function(grid, lambda x: 0.2 * np.cos(2 * np.pi * x[:, 0]))
    pair = make_reversible_pair(phi, zero_pressure(1))
    leg = legendre_pair_zero_pressure(phi)
    v = velocity_on_k0(pair)
    tol = grid_tol(grid)
    for j in range(grid.K - 1):
        mask = pair.k0_mask[j] & leg.k0_mask[j]
        g = masked_gradient(leg.upper.values[j + 1], mask, grid)
        assert np.max(np.abs(v.values[j][mask] - g[mask])) <= 2 * tol / grid.h


def test_zero_pressure_closed_form_map(zero_run):
    _, _, _, v, path = zero_run
    seeds = path.positions(0.25)
    fm = integrate_flow(v, seeds, 0.25, 0.75)
    np.testing.assert_allclose(fm.arrivals, closed_form_map(v, seeds, 0.25, 0.75), atol=1e-4)


@pytest.mark.parametrize("run", ["zero_run", "mode_run"])
def test_composition(run, request):
    _, _, _, v, path = request.getfixturevalue(run)
    seeds = np.r_[path.positions(0.25), np.linspace(0, 1, 9, endpoint=False)[:, None]]
    whole = integrate_flow(v, seeds, 0.25, 0.75)
    half = integrate_flow(v, integrate_flow(v, seeds, 0.25, 0.5).arrivals, 0.5, 0.75)
    assert np.max(np.abs(min_displacement(whole.points, half.points))) <= flow_tol(v.grid)


def test_measure_path_examples():
    P0 = zero_pressure(1)
    d = DiscreteMeasure.dirac([0.3])
    plan, _ = solve_kantorovich(cost_matrix(d, d, P0, 0, 1), d, d)
    mp = build_measure_path(plan, P0)
    for t in (0.0, 0.4, 1.0):
        np.testing.assert_allclose(mp.slice(t).points, [[0.3]], atol=1e-15)
    a, b = DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([0.5])
    plan, _ = solve_kantorovich(cost_matrix(a, b, P0, 0, 1), a, b)
    mid = build_measure_path(plan, P0).slice(0.5)
    assert abs(mid.points[0, 0] - 0.25) <= 1e-12 or abs(mid.points[0, 0] - 0.75) <= 1e-12


def test_measure_path_endpoints(zero_run):
    _, rep, _, _, path = zero_run
    np.testing.assert_allclose(np.sort(path.slice(0.0).points[:, 0]), [0.25, 0.5], atol=1e-15)
    np.testing.assert_allclose(np.sort(path.slice(1.0).points[:, 0]), [0.375, 0.75], atol=1e-15)


@pytest.mark.parametrize("run", ["zero_run", "mode_run"])
def test_orbit_nodes_lie_in_mask(run, request):
    _, _, pair, _, path = request.getfixturevalue(run)
    grid = pair.grid
    for j, t in enumerate(grid.times[1:-1]):
        for x in path.positions(float(t)):
            lo = int(np.floor(x[0] / grid.h)) % grid.m
            assert pair.k0_mask[j][lo] or pair.k0_mask[j][(lo + 1) % grid.m]


def test_transport_verification_zero(zero_run):
    P, _, _, v, path = zero_run
    rep = verify_transport(path, v, 0.25, 0.75, P)
    assert rep.w1 <= 1e-3
    assert rep.mass == pytest.approx(1.0, abs=1e-15)
    assert abs(rep.cost_gap) <= 3 * grid_tol(FINE)


def test_transport_verification_mode(mode_run):
    P, _, _, v, path = mode_run
    rep = verify_transport(path, v, 0.25, 0.75, P)
    assert abs(rep.cost_gap) <= 3 * grid_tol(MODE_GRID)
    assert rep.mass == pytest.approx(1.0, abs=1e-15)


def test_stationary_transport():
    grid = make_grid(1, 64, 1.0, 4)
    P0 = zero_pressure(1)
    mu = DiscreteMeasure.create([[0.25], [0.5]])
    plan, _ = solve_kantorovich(cost_matrix(mu, mu, P0, 0, 1), mu, mu)
    pair = make_reversible_pair(GridFunction(grid, np.zeros(64), 0.0), P0)
    rep = verify_transport(build_measure_path(plan, P0), lipschitz_extend(velocity_on_k0(pair)), 0.25, 0.75, P0)
    assert rep.w1 == 0.0


def test_mask_invariance(zero_run, mode_run):
    for _, _, _, v, _ in (zero_run, mode_run):
        assert mask_invariance(v, 200) <= 1.0


def test_velocity_uniqueness_on_orbits(mode_run):
    P, rep, _, _, path = mode_run
    mu1 = rep.plan.cols
    seeds = [dual_seed(MODE_GRID, d, mu1, P, 1.0) for d in (rep.duals, centered_duals(rep.plan, rep.duals))]
    assert np.ptp(seeds[0] - seeds[1]) > 1e-3  # genuinely different optimal potentials
    a, b = (velocity_on_k0(make_reversible_pair(GridFunction(MODE_GRID, s, 0.0), P)) for s in seeds)
    assert velocity_agreement(a, b, path) <= 2 * grid_tol(MODE_GRID) / MODE_GRID.h


def test_restriction_consistency(mode_run):
    P, rep, _, _, path = mode_run
    t = 0.5
    mid = path.slice(t)
    mu0, mu1 = path.slice(0.0), path.slice(1.0)
    left, _ = solve_kantorovich(cost_matrix(mu0, mid, P, 0.0, t), mu0, mid)
    right, _ = solve_kantorovich(cost_matrix(mid, mu1, P, t, 1.0), mid, mu1)
    assert abs(left.value + right.value - rep.K) <= 3 * grid_tol(MODE_GRID)
