import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from torusot.action import Path
from torusot.errors import PreconditionViolated
from torusot.hj import (
    GridFunction,
    SpaceTimeField,
    check_generalized_subsolution,
    discrete_lipschitz,
    grid_tol,
    hopf_lax_step,
    legendre_pair_zero_pressure,
    make_reversible_pair,
    propagate,
    reversibility_set,
)
from torusot.pressure import PressureSpec, single_mode, zero_pressure
from torusot.torus import make_grid

SMALL = make_grid(1, 32, 1.0, 4)
MID = make_grid(1, 128, 1.0, 4)


def cos_datum(grid, a=1.0):
    return GridFunction.from_function(grid, lambda x: a * np.cos(2 * np.pi * x[:, 0]))


def test_step_zero_datum_zero_pressure():
    out = hopf_lax_step(GridFunction(SMALL, np.zeros(32), 0.0), 0.0, 0.25, zero_pressure(1))
    np.testing.assert_array_equal(out.values, 0.0)


def test_step_constant_pressure():
    out = hopf_lax_step(GridFunction(SMALL, np.zeros(32), 0.0), 0.0, 0.25, PressureSpec(1, (), 0.4))
    np.testing.assert_allclose(out.values, 0.1, atol=1e-14)


def test_step_matches_fine_lattice_oracle():
    grid = make_grid(1, 256, 1.0, 10)
    phi = cos_datum(grid)
    out = hopf_lax_step(phi, 0.0, 0.1, zero_pressure(1))
    y = np.arange(-4096, 2 * 4096) / 4096  # 16x finer, lifted over three periods
    x = grid.points[:, 0]
    oracle = np.min(np.cos(2 * np.pi * y)[None, :] + (x[:, None] - y[None, :]) ** 2 / 0.2, axis=1)
    assert np.max(np.abs(out.values - oracle)) <= 5e-4


def test_forward_commutes_with_constants():
    phi = cos_datum(SMALL, 0.2)
    P = single_mode(1, [1], a=0.1)
    a = propagate(phi, P)
    b = propagate(GridFunction(SMALL, phi.values + 3.0, 0.0), P)
    np.testing.assert_allclose(b.values - a.values, 3.0, atol=1e-12)


def test_lipschitz_nonincreasing():
    grid = make_grid(1, 128, 1.0, 8)
    f = propagate(cos_datum(grid), zero_pressure(1))
    lips = [discrete_lipschitz(f.values[k], grid) for k in range(grid.K + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(lips, lips[1:]))
    for k in range(2, grid.K + 1, 2):
        assert lips[k] <= lips[k // 2] + 1e-12


def test_backward_keeps_end_slice():
    end = GridFunction(SMALL, np.sin(2 * np.pi * SMALL.points[:, 0]), 1.0)
    b = propagate(end, single_mode(1, [1], a=0.1), "backward")
    np.testing.assert_array_equal(b.values[-1], end.values)


def test_semigroup():
    P = single_mode(1, [1], a=0.1)
    phi = cos_datum(MID, 0.2)
    two = hopf_lax_step(hopf_lax_step(phi, 0.0, 0.25, P), 0.25, 0.5, P)
    one = hopf_lax_step(phi, 0.0, 0.5, P)
    assert np.max(np.abs(two.values - one.values)) <= 2 * grid_tol(MID)


@given(arrays(float, 32, elements=st.floats(-1, 1)), arrays(float, 32, elements=st.floats(0, 1)))
def test_forward_step_monotone(a, bump):
    P = single_mode(1, [1], a=0.1)
    lo = hopf_lax_step(GridFunction(SMALL, a, 0.0), 0.0, 0.25, P)
    hi = hopf_lax_step(GridFunction(SMALL, a + bump, 0.0), 0.0, 0.25, P)
    assert np.all(hi.values >= lo.values - 1e-14)


def test_pair_zero_everything():
    pair = make_reversible_pair(GridFunction(SMALL, np.zeros(32), 0.0), zero_pressure(1))
    np.testing.assert_allclose(pair.upper.values, 0.0, atol=1e-14)
    np.testing.assert_allclose(pair.lower.values, 0.0, atol=1e-14)
    assert pair.k0_mask.all()


def test_pair_zero_pressure_reversible_and_matches_legendre():
    phi = cos_datum(MID, 0.2)
    tol = grid_tol(MID)
    pair = make_reversible_pair(phi, zero_pressure(1))
    assert np.max(np.abs(pair.gap)) <= tol
    leg = legendre_pair_zero_pressure(phi)
    assert np.max(np.abs(leg.upper.values - pair.upper.values)) <= 2 * tol
    assert np.max(np.abs(leg.lower.values - pair.lower.values)) <= 2 * tol


def test_pair_single_mode_ordering(Pmode):
    pair = make_reversible_pair(cos_datum(MID, 0.2), Pmode)
    assert np.all(pair.gap >= -1e-9)
    assert pair.endpoint_gap <= 1e-9


def test_legendre_constant_and_idempotent():
    c = legendre_pair_zero_pressure(GridFunction(SMALL, np.full(32, 0.7), 0.0))
    np.testing.assert_allclose(c.upper.values, 0.7, atol=1e-12)
    np.testing.assert_allclose(c.lower.values, 0.7, atol=1e-12)
    once = legendre_pair_zero_pressure(cos_datum(MID, 0.2))
    twice = legendre_pair_zero_pressure(once.upper.slice(0))
    np.testing.assert_allclose(twice.upper.values[0], once.upper.values[0], atol=1e-12)


def test_legendre_rejects_pressure():
    with pytest.raises(PreconditionViolated):
        legendre_pair_zero_pressure(cos_datum(SMALL), P=single_mode(1, [1], a=0.1))


def test_reversibility_set_examples():
    f = SpaceTimeField(SMALL, np.zeros((5, 32)), "forward")
    assert reversibility_set(f, f, 0.0).all()
    v = np.zeros((5, 32))
    v[2, 7] = 1e-6
    mask = reversibility_set(SpaceTimeField(SMALL, v, "forward"), f, 0.0)
    assert not mask[1, 7] and mask.sum() == mask.size - 1


def stationary(x, t0=0.1, t1=0.9):
    return Path.straight([x], [x], t0, t1, 17)


def test_subsolution_zero_field():
    f = SpaceTimeField(SMALL, np.zeros((5, 32)), "forward")
    paths = [stationary(0.3), Path.straight([0.1], [0.6], 0.0, 1.0, 33)]
    assert check_generalized_subsolution(f, PressureSpec(1, (), 0.2), paths).max_violation == 0.0


def test_subsolution_forward_solution():
    P = single_mode(1, [1], a=0.1)
    f = propagate(cos_datum(MID, 0.2), P)
    paths = [Path.straight([x], [x + s], 0.0, 1.0, 9) for x in (0.1, 0.4, 0.8) for s in (-0.3, 0.0, 0.2)]
    assert check_generalized_subsolution(f, P, paths).max_violation <= 2 * grid_tol(MID) / MID.dt


def test_subsolution_constructed_violator():
    f = SpaceTimeField(SMALL, np.repeat(2.0 * SMALL.times[:, None], 32, axis=1), "forward")
    rep = check_generalized_subsolution(f, zero_pressure(1), [stationary(0.5)])
    assert rep.max_violation == pytest.approx(2.0, abs=1e-12)


def test_forward_dominates_classical_subsolution():
    P = single_mode(1, [1], a=0.1)
    phi = cos_datum(MID, 0.2)
    f = propagate(phi, P)
    minP = -0.1
    psi = phi.values.min() + minP * MID.times
    assert np.all(f.values >= psi[:, None] - 1e-12)
