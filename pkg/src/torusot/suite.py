"""Acceptance battery: one metrics record per criterion, deterministic given the seed."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import dynamic_norm as dn
from .action import Path, action_table, minimize_action, torus_action, action_hj_residual
from .flow import build_measure_path, closed_form_map, integrate_flow, lipschitz_extend, mask_invariance, velocity_on_k0, verify_transport
from .hj import GridFunction, grid_tol, hopf_lax_step, legendre_pair_zero_pressure, make_reversible_pair
from .pressure import Amplitude, Mode, PressureSpec, zero_pressure
from .torus import make_grid
from .transport import DiscreteMeasure, duality_gap, random_measure


@dataclass(frozen=True)
class SuiteConfig:
    seed: int = 0
    m: int = 512
    K: int = 8
    coarse_m: int = 256
    T: float = 1.0
    t1: float = 0.25
    t2: float = 0.75
    atoms: int = 8
    min_separation: float = 1.0 / 32.0
    omega: float = 1.25
    eps: tuple[float, ...] = (1e-1, 1e-2)
    alphas: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    criteria: tuple[int, ...] = tuple(range(1, 12))


def mode_pressure() -> PressureSpec:
    """The single-mode C^1 pressure used throughout: 0.1 cos(2 pi x) cos(pi t)."""
    return PressureSpec(1, (Mode((1,), Amplitude.cosine(0.1, math.pi)),))


PRESSURES = {"zero": zero_pressure(1), "mode": mode_pressure()}


def two_atom_problem() -> tuple[DiscreteMeasure, DiscreteMeasure]:
    return (
        DiscreteMeasure.create([[0.25], [0.5]], [0.5, 0.5]),
        DiscreteMeasure.create([[0.375], [0.75]], [0.5, 0.5]),
    )


def eight_atom_problem(cfg: SuiteConfig) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Uniform atoms on the coarse lattice, pairwise separated."""
    rng = np.random.default_rng(cfg.seed)
    lattice = make_grid(1, cfg.coarse_m, cfg.T, cfg.K)
    make = lambda: random_measure(1, cfg.atoms, rng, lattice, uniform=True, min_separation=cfg.min_separation)
    return make(), make()


class _Shared:
    """Duality reports and velocity fields reused by criteria 6, 7, 8 and 11."""

    def __init__(self, cfg: SuiteConfig):
        self.cfg = cfg
        self.problems = {"two": two_atom_problem(), "eight": eight_atom_problem(cfg)}
        self.fine = make_grid(1, cfg.m, cfg.T, cfg.K)
        self.coarse = make_grid(1, cfg.coarse_m, cfg.T, cfg.K)
        self._reports: dict = {}
        self._fields: dict = {}

    def cases(self):
        for name in self.problems:
            for pname in PRESSURES:
                yield name, pname

    def report(self, name: str, pname: str, coarse: bool = False):
        key = (name, pname, coarse)
        if key not in self._reports:
            grid = self.coarse if coarse else self.fine
            self._reports[key] = duality_gap(*self.problems[name], PRESSURES[pname], self.cfg.T, grid, seed=self.cfg.seed)
        return self._reports[key]

    def flow(self, name: str, pname: str):
        key = (name, pname)
        if key not in self._fields:
            rep = self.report(name, pname)
            v = lipschitz_extend(velocity_on_k0(rep.pairs["dual"]))
            path = build_measure_path(rep.plan, PRESSURES[pname], 0.0, self.cfg.T)
            self._fields[key] = (v, path)
        return self._fields[key]


def criterion_1(cfg: SuiteConfig, shared: _Shared) -> dict:
    rng = np.random.default_rng(cfg.seed + 1)
    worst = 0.0
    for trial in range(100):
        n = 1 + trial % 2
        x = rng.uniform(0, 1, n)
        y = x + rng.uniform(-0.5, 0.5, n)
        dt = rng.uniform(0.1, 2.0)
        t1 = rng.uniform(0, 1)
        res = minimize_action(x, y, t1, t1 + dt, zero_pressure(n))
        worst = max(worst, abs(res.value - float(np.sum((x - y) ** 2)) / (2 * dt)))
    return {"max_error": worst, "trials": 100, "pass": worst <= 1e-8}


def criterion_2(cfg: SuiteConfig, shared: _Shared) -> dict:
    rng = np.random.default_rng(cfg.seed + 2)
    P = mode_pressure()
    lattice = ((np.arange(512) + 0.5) / 512)[:, None]
    lower, attain = math.inf, 0.0
    for _ in range(50):
        x, z = rng.uniform(0, 1, (2, 1))
        tau = rng.uniform(0.2, 0.8)
        first = action_table(x[None], lattice, 0.0, tau, P)[0][0]
        second = action_table(lattice, z[None], tau, 1.0, P)[0][:, 0]
        direct = torus_action(x, z, 0.0, 1.0, P).value
        slack = float(np.min(first + second)) - direct
        lower = min(lower, slack)
        attain = max(attain, slack)
    return {"min_slack": lower, "max_attainment_gap": attain, "triples": 50, "pass": lower >= -2e-3 and attain <= 2e-3}


def criterion_3(cfg: SuiteConfig, shared: _Shared) -> dict:
    grid = make_grid(1, 256, cfg.T, 16)
    out = {}
    ok = True
    for pname, P in PRESSURES.items():
        r = action_hj_residual(P, [0.3], grid, 0.0, 0.6)
        frac = r.pass_fraction(1e-2)
        out[pname] = {"pass_fraction": frac, "masked_fraction": r.masked_fraction}
        ok &= frac >= 0.8
    out["pass"] = ok
    return out


def regression_fields(grid, rng) -> dict[str, np.ndarray]:
    x = grid.points[:, 0]
    c = rng.uniform(-0.05, 0.05, 4)
    return {
        "cosine": 0.2 * np.cos(2 * np.pi * x),
        "two_modes": 0.1 * np.sin(4 * np.pi * x) + 0.05 * np.cos(2 * np.pi * x),
        "tent": 0.3 * np.abs(x - 0.5),
        "random": c[0] * np.cos(2 * np.pi * x) + c[1] * np.sin(2 * np.pi * x) + c[2] * np.cos(6 * np.pi * x) + c[3] * np.sin(6 * np.pi * x),
    }


def criterion_4(cfg: SuiteConfig, shared: _Shared) -> dict:
    grid = make_grid(1, cfg.m, cfg.T, 16)
    gt = grid_tol(grid)
    dt = grid.dt
    worst = 0.0
    for P in PRESSURES.values():
        for vals in regression_fields(grid, np.random.default_rng(cfg.seed + 4)).values():
            for direction in ("forward", "backward"):
                if direction == "forward":
                    phi = GridFunction(grid, vals, 0.0)
                    two = hopf_lax_step(hopf_lax_step(phi, 0.0, dt, P), dt, 2 * dt, P)
                    one = hopf_lax_step(phi, 0.0, 2 * dt, P)
                else:
                    phi = GridFunction(grid, vals, 2 * dt)
                    two = hopf_lax_step(hopf_lax_step(phi, dt, 2 * dt, P, "backward"), 0.0, dt, P, "backward")
                    one = hopf_lax_step(phi, 0.0, 2 * dt, P, "backward")
                worst = max(worst, float(np.max(np.abs(two.values - one.values))))
    return {"max_defect": worst, "grid_tol": gt, "pass": worst <= 2 * gt}


def criterion_5(cfg: SuiteConfig, shared: _Shared) -> dict:
    grid = shared.fine
    gt = grid_tol(grid)
    phi0 = GridFunction.from_function(grid, lambda x: 0.2 * np.cos(2 * np.pi * x[:, 0]))
    out = {"grid_tol": gt}
    ok = True
    for pname, P in PRESSURES.items():
        pair = make_reversible_pair(phi0, P)
        rec = {"min_order": float(np.min(pair.gap)), "endpoint_gap": pair.endpoint_gap}
        ok &= rec["min_order"] >= -1e-9 and rec["endpoint_gap"] <= 1e-9
        if pname == "zero":
            leg = legendre_pair_zero_pressure(phi0)
            rec["sup_gap"] = float(np.max(np.abs(pair.gap)))
            rec["legendre_match"] = float(max(np.max(np.abs(leg.upper.values - pair.upper.values)), np.max(np.abs(leg.lower.values - pair.lower.values))))
            ok &= rec["sup_gap"] <= 1e-3 and rec["legendre_match"] <= 2 * gt
        out[pname] = rec
    out["pass"] = ok
    return out


def criterion_6(cfg: SuiteConfig, shared: _Shared) -> dict:
    out = {}
    ok = True
    for name, pname in shared.cases():
        fine = shared.report(name, pname)
        coarse = shared.report(name, pname, coarse=True)
        rec = {
            "K": fine.K,
            "E_best": fine.E_best,
            "gap": fine.gap,
            "relative_gap": fine.relative_gap,
            "gap_coarse": coarse.gap,
            "grid_tol": fine.grid_tol,
            "is_permutation": fine.is_permutation,
        }
        rec["pass"] = bool(fine.relative_gap <= 2e-2 and fine.gap >= -2 * fine.grid_tol and abs(fine.gap) <= abs(coarse.gap) + 1e-15)
        ok &= rec["pass"]
        out[f"{name}_{pname}"] = rec
    out["pass"] = ok
    return out


def criterion_7(cfg: SuiteConfig, shared: _Shared) -> dict:
    out = {}
    ok = True
    for name, pname in shared.cases():
        v, path = shared.flow(name, pname)
        rep = verify_transport(path, v, cfg.t1, cfg.t2, PRESSURES[pname])
        gt = shared.report(name, pname).grid_tol
        rec = {"w1": rep.w1, "cost_gap": rep.cost_gap, "grid_tol": gt, "mass": rep.mass}
        good = rep.w1 <= 1e-3 and abs(rep.cost_gap) <= 3 * gt
        if pname == "zero":
            seeds = path.slice(cfg.t1).points
            cf = closed_form_map(v, seeds, cfg.t1, cfg.t2)
            fl = integrate_flow(v, seeds, cfg.t1, cfg.t2).arrivals
            rec["closed_form_defect"] = float(np.max(np.abs(cf - fl)))
            good &= rec["closed_form_defect"] <= 1e-4
        rec["pass"] = bool(good)
        ok &= good
        out[f"{name}_{pname}"] = rec
    out["pass"] = ok
    return out


def criterion_8(cfg: SuiteConfig, shared: _Shared) -> dict:
    out = {}
    ok = True
    for name, pname in shared.cases():
        v, _ = shared.flow(name, pname)
        cells = mask_invariance(v, 200)
        out[f"{name}_{pname}"] = {"max_cells": cells, "mask_fraction": float(np.mean(v.mask))}
        ok &= cells <= 1.0
    out["pass"] = ok
    return out


def criterion_9(cfg: SuiteConfig, shared: _Shared) -> dict:
    rng = np.random.default_rng(cfg.seed + 9)
    om = dn.OrbitMeasure.from_functions
    fam = dn.default_family(1, size=64)
    cases = {
        "stationary": (om([lambda t: 0.3 + 0 * t], [1.0]), 0.0),
        "straight": (om([lambda t: 0.2 + 0.25 * t], [1.0]), 0.0625),
        "two_speeds": (om([lambda t: 0.1 + 0.2 * t, lambda t: 0.6 + 0.4 * t], [0.5, 0.5]), 0.1),
        "curved": (om([lambda t: 0.1 + 0.3 * t + 0.05 * np.sin(2 * np.pi * t)], [1.0]), 0.09 + 0.5 * (0.1 * np.pi) ** 2),
        "crossing": (om([lambda t: 0.2 + 0.3 * t, lambda t: 0.5 - 0.3 * t], [0.5, 0.5]), 0.09),
    }
    single = {"straight", "curved"}
    h2_err, upper_slack, lower_ratio = 0.0, -math.inf, math.inf
    out = {}
    for name, (mu, exact) in cases.items():
        h2sq = dn.h2_norm_orbits(mu) ** 2
        h2_err = max(h2_err, abs(h2sq - exact))
        rec = {"h2_squared": h2sq}
        if name != "stationary":
            rl = dn.rayleigh_lower_bound(mu, fam)
            rec["rayleigh"] = rl
            upper_slack = max(upper_slack, rl - h2sq)
            if name in single:
                lower_ratio = min(lower_ratio, rl / h2sq)
        out[name] = rec
    atom_err = 0.0
    for _ in range(10):
        x0, x1 = rng.uniform(0, 1, (2, 1))
        h2, w2 = dn.single_atom_check(x0, x1)
        atom_err = max(atom_err, abs(h2 - w2))
    out.update(
        h2_error=h2_err,
        rayleigh_excess=upper_slack,
        single_orbit_ratio=lower_ratio,
        single_atom_error=atom_err,
        family_size=fam.size,
    )
    out["pass"] = bool(h2_err <= 1e-8 and upper_slack <= 1e-8 and lower_ratio >= 0.9 and atom_err <= 1e-10)
    return out


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def criterion_10(cfg: SuiteConfig, shared: _Shared) -> dict:
    rng = np.random.default_rng(cfg.seed + 10)
    path = Path.straight([0.3], [0.55], 0.0, 1.0)
    fam = dn.default_family(1, size=64)
    core = float(np.sum((path.nodes[-1] - path.nodes[0]) ** 2))
    alphas = np.array(cfg.alphas)
    excess, lp, mass_err, resid = [], [], 0.0, 0.0
    for a in alphas:
        tube = dn.tube_measure_build(path, a)
        excess.append(tube.energy() - core)
        lp.append(tube.lp_norm(1.5))
        resid = max(resid, tube.weak_residual(fam))
    for a in rng.uniform(1, 8, 4):
        tube = dn.tube_measure_build(path, a)
        for t in rng.uniform(0.01, 0.99, 4):
            mass_err = max(mass_err, abs(tube.mass(float(t)) - 1.0))
    excess = np.array(excess)
    c1 = excess * alphas**2
    c1_spread = float((c1.max() - c1.min()) / c1.mean())
    energy_slope = _fit_slope(alphas, excess)
    lp_slope = _fit_slope(alphas, lp)
    lp_target = 1 * (1.5 - 1) / 1.5
    out = {
        "mass_error": mass_err,
        "c1_fitted": float(c1.mean()),
        "c1_analytic": dn.tube_energy_constant(1),
        "c1_spread": c1_spread,
        "energy_slope": energy_slope,
        "lp_slope": lp_slope,
        "lp_slope_target": lp_target,
        "weak_residual": resid,
    }
    out["pass"] = bool(
        mass_err <= 1e-6
        and c1_spread <= 0.1
        and abs(energy_slope + 2.0) <= 0.2
        and abs(lp_slope - lp_target) <= 0.1 * lp_target
        and resid <= 1e-4
    )
    return out


def criterion_11(cfg: SuiteConfig, shared: _Shared) -> dict:
    out = {}
    ok = True
    mu0, mu1 = shared.problems["two"]
    for pname, P in PRESSURES.items():
        rep = shared.report("two", pname)
        rec = {"K": rep.K, "grid_tol": rep.grid_tol}
        for eps in cfg.eps:
            psi = dn.regularized_dual_eval(rep.pairs["dual"].upper, P, eps, cfg.omega, mu0, mu1)
            rec[f"psi_{eps:g}"] = psi
            ok &= psi <= rep.K + 2 * rep.grid_tol
        out[pname] = rec
    out["pass"] = ok
    return out


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def run_suite(cfg: SuiteConfig = SuiteConfig(), progress=None) -> tuple[dict, dict]:
    """Returns (report, timings): the report is deterministic, timings are wall-clock seconds."""
    shared = _Shared(cfg)
    results, timings = {}, {}
    for i in cfg.criteria:
        start = time.perf_counter()
        results[str(i)] = CRITERIA[i](cfg, shared)
        timings[str(i)] = time.perf_counter() - start
        if progress is not None:
            progress(i, results[str(i)]["pass"], timings[str(i)])
    config = asdict(cfg)
    report = {"config": config, "criteria": results, "all_pass": all(r["pass"] for r in results.values())}
    return report, timings
