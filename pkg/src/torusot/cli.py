"""Command-line front end: `torusot <subcommand> [--config run.toml] [--out dir] ...`.

Exit status 0 on success, 2 on a validation error, 3 on a numerical failure. Every run
writes `<hash>_<subcommand>.json` into the output directory (an error record on failure),
where <hash> identifies the config, seed and run options.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path as FsPath

import numpy as np

from . import records
from .config import RunConfig, build_measure, load_config
from .errors import ConfigError, InvalidMeasure, TorusOTError

SUBCOMMANDS = ("action", "hj", "pair", "ot", "duality", "flow", "norm", "suite")


def _limit_threads(k: int | None):
    if k is None:
        return None
    if k < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # BLAS keeps its default pool; our own code is single-threaded
        return None
    return threadpool_limits(k)


class Run:
    """One subcommand invocation: config, options, output naming."""

    def __init__(self, sub: str, cfg: RunConfig, args: argparse.Namespace, options: dict):
        self.sub = sub
        self.cfg = cfg
        self.args = args
        self.options = options
        self.out = FsPath(args.out)
        self.tag = cfg.digest({"subcommand": sub, "options": options})
        self.artifacts: list[str] = []

    def path(self, suffix: str) -> FsPath:
        return self.out / f"{self.tag}_{self.sub}{suffix}"

    def csv(self, suffix: str, writer, *a) -> None:
        p = writer(self.path(suffix), *a)
        self.artifacts.append(p.name)

    @property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.cfg.seed)

    def measures(self):
        rng = self.rng
        return build_measure(self.cfg, self.cfg.source, rng), build_measure(self.cfg, self.cfg.target, rng)


def _opt(run_options: dict, section: dict, key: str, default=None):
    v = run_options.get(key)
    if v is not None:
        return v
    return section.get(key, default)


# subcommands: each returns the JSON report


def cmd_action(run: Run) -> dict:
    from .action import DEFAULT_NODES, torus_action

    sec = run.cfg.section("action")
    x = _opt(run.options, sec, "x")
    y = _opt(run.options, sec, "y")
    if x is None or y is None:
        raise ConfigError("action needs endpoints x and y ([action] or --x/--y)")
    t1 = float(_opt(run.options, sec, "t1", 0.0))
    t2 = float(_opt(run.options, sec, "t2", run.cfg.T))
    nodes = int(sec.get("nodes", DEFAULT_NODES))
    res = torus_action(np.array(x, float), np.array(y, float), t1, t2, run.cfg.pressure, node_count=nodes)
    if run.args.emit_slices:
        run.csv("_path.csv", records.write_path, res.path.times, res.path.nodes)
    return {"value": res.value, "shift": res.shift.tolist(), "el_residual": res.el_residual, "t1": t1, "t2": t2}


def _initial_field(run: Run):
    grid = run.cfg.grid
    sec = run.cfg.section("hj")
    if "phi0_file" in sec:
        _, data = records.read_csv(run.cfg.resolve(sec["phi0_file"]))
        if data.shape[1] != grid.n + 1:
            raise ConfigError("phi0_file needs columns i0.., value")
        vals = np.full(grid.size, np.nan)
        flat = np.ravel_multi_index(tuple(data[:, d].astype(int) for d in range(grid.n)), grid.shape)
        vals[flat] = data[:, -1]
        if np.isnan(vals).any():
            raise ConfigError("phi0_file does not cover every grid node")
        return grid, vals
    x = grid.points
    vals = np.zeros(grid.size)
    for term in sec.get("phi0", [{"k": [1] + [0] * (grid.n - 1), "cos": 0.2}]):
        k = np.asarray(term.get("k"), dtype=float)
        if k.shape != (grid.n,):
            raise ConfigError(f"phi0 wavevector must have {grid.n} entries")
        th = 2 * np.pi * (x @ k)
        vals += float(term.get("cos", 0.0)) * np.cos(th) + float(term.get("sin", 0.0)) * np.sin(th)
    return grid, vals


def _pair_report(run: Run, pair) -> dict:
    grid = pair.grid
    if run.args.emit_slices:
        run.csv("_upper.csv", records.write_slices, grid, pair.upper.values)
        run.csv("_lower.csv", records.write_slices, grid, pair.lower.values)
        run.csv("_gap.csv", records.write_slices, grid, pair.gap)
        mask = np.zeros((grid.K + 1, grid.size))
        mask[1:-1] = pair.k0_mask
        run.csv("_mask.csv", records.write_slices, grid, mask)
    return {
        "eps_rev": pair.eps_rev,
        "grid_tol": pair.grid_tol,
        "endpoint_gap": pair.endpoint_gap,
        "min_gap": float(np.min(pair.gap)),
        "sup_gap": float(np.max(np.abs(pair.gap))),
        "k0_fraction": float(np.mean(pair.k0_mask)),
    }


def cmd_hj(run: Run) -> dict:
    from .hj import GridFunction, grid_tol, propagate

    if run.options.get("pair"):
        return cmd_pair(run)
    grid, vals = _initial_field(run)
    sec = run.cfg.section("hj")
    direction = _opt(run.options, sec, "direction", "forward")
    start = 0.0 if direction == "forward" else grid.T
    field = propagate(GridFunction(grid, vals, start), run.cfg.pressure, direction)
    if run.args.emit_slices:
        run.csv("_slices.csv", records.write_slices, grid, field.values)
    return {
        "direction": direction,
        "grid_tol": grid_tol(grid),
        "slice_min": field.values.min(axis=1).tolist(),
        "slice_max": field.values.max(axis=1).tolist(),
    }


def cmd_pair(run: Run) -> dict:
    from .hj import GridFunction, make_reversible_pair

    grid, vals = _initial_field(run)
    eps = run.cfg.section("hj").get("eps_rev")
    pair = make_reversible_pair(GridFunction(grid, vals, 0.0), run.cfg.pressure, eps_rev=eps)
    return _pair_report(run, pair)


def _emit_measures(run: Run, mu0, mu1, plan=None):
    run.csv("_source.csv", records.write_measure, mu0.points, mu0.weights)
    run.csv("_target.csv", records.write_measure, mu1.points, mu1.weights)
    if plan is not None:
        run.csv("_plan.csv", records.write_plan, plan.gamma)


def cmd_ot(run: Run) -> dict:
    from .transport import cost_matrix, solve_kantorovich

    mu0, mu1 = run.measures()
    plan, duals = solve_kantorovich(cost_matrix(mu0, mu1, run.cfg.pressure, 0.0, run.cfg.T), mu0, mu1)
    _emit_measures(run, mu0, mu1, plan)
    mp = plan.monge_map
    return {
        "K": plan.value,
        "is_permutation": plan.is_permutation,
        "monge_map": mp.tolist() if mp is not None else None,
        "dual_value": duals.value(mu0.weights, mu1.weights),
        "dual_violation": duals.max_violation(plan.cost),
        "atoms": [mu0.size, mu1.size],
    }


def cmd_duality(run: Run) -> dict:
    from .transport import duality_gap

    mu0, mu1 = run.measures()
    n_random = int(run.cfg.section("duality").get("n_random", 2))
    rep = duality_gap(mu0, mu1, run.cfg.pressure, run.cfg.T, run.cfg.grid, seed=run.cfg.seed, n_random=n_random)
    _emit_measures(run, mu0, mu1, rep.plan)
    out = rep.summary()
    # the dual-seeded pair carries the flow; it is the one saved for `flow --from`
    out["pair"] = _pair_report(run, rep.pairs["dual"])
    out["pair"]["seed"] = "dual"
    out["grid"] = {"n": run.cfg.n, "m": run.cfg.m, "K": run.cfg.K, "T": run.cfg.T}
    return out


def _load_saved_duality(run: Run, folder: FsPath):
    """Pair and measures from the artifacts of an earlier `duality --emit-slices` run."""
    from .hj import ReversiblePair, SpaceTimeField, reversibility_set
    from .transport import DiscreteMeasure

    reports = sorted(folder.glob("*_duality.json"))
    if len(reports) != 1:
        raise ConfigError(f"{folder} must hold exactly one duality report, found {len(reports)}")
    stem = reports[0].name[: -len(".json")]
    saved = json.loads(reports[0].read_text())["report"]
    grid = run.cfg.grid
    g = saved.get("grid", {})
    if (g.get("n"), g.get("m"), g.get("K"), g.get("T")) != (grid.n, grid.m, grid.K, grid.T):
        raise ConfigError("the saved duality run used a different grid")
    upper_csv, lower_csv = folder / f"{stem}_upper.csv", folder / f"{stem}_lower.csv"
    if not (upper_csv.is_file() and lower_csv.is_file()):
        raise ConfigError("the saved duality run has no field slices (rerun it with --emit-slices)")
    upper = SpaceTimeField(grid, records.read_slices(upper_csv, grid), "backward")
    lower = SpaceTimeField(grid, records.read_slices(lower_csv, grid), "forward")
    eps = float(saved["pair"]["eps_rev"])
    pair = ReversiblePair(upper, lower, reversibility_set(upper, lower, eps), eps, float(saved["pair"]["grid_tol"]))
    mu0 = DiscreteMeasure.create(*records.read_measure(folder / f"{stem}_source.csv"))
    mu1 = DiscreteMeasure.create(*records.read_measure(folder / f"{stem}_target.csv"))
    return pair, mu0, mu1


def cmd_flow(run: Run) -> dict:
    from .flow import build_measure_path, integrate_flow, lipschitz_extend, mask_invariance, velocity_on_k0, verify_transport
    from .transport import cost_matrix, duality_gap, solve_kantorovich

    sec = run.cfg.section("flow")
    P = run.cfg.pressure
    from_dir = _opt(run.options, sec, "from_dir")
    if from_dir is not None:
        pair, mu0, mu1 = _load_saved_duality(run, run.cfg.resolve(from_dir))
        plan, _ = solve_kantorovich(cost_matrix(mu0, mu1, P, 0.0, run.cfg.T), mu0, mu1)
    else:
        mu0, mu1 = run.measures()
        rep = duality_gap(mu0, mu1, P, run.cfg.T, run.cfg.grid, seed=run.cfg.seed)
        pair, plan = rep.pairs["dual"], rep.plan
    t1 = float(_opt(run.options, sec, "t1", 0.25 * run.cfg.T))
    t2 = float(_opt(run.options, sec, "t2", 0.75 * run.cfg.T))
    v = lipschitz_extend(velocity_on_k0(pair))
    path = build_measure_path(plan, P, 0.0, run.cfg.T)
    seeds_file = _opt(run.options, sec, "seeds_file")
    seeds = records.read_points(run.cfg.resolve(seeds_file)) if seeds_file else path.slice(t1).points
    fm = integrate_flow(v, seeds, t1, t2, time_interp=sec.get("time_interp", "characteristic"))
    header = [f"seed_{c}" for c in records.coord_names(run.cfg.n)] + records.coord_names(run.cfg.n)
    p = records.write_csv(run.path("_arrivals.csv"), header, np.hstack([fm.seeds, fm.points]))
    run.artifacts.append(p.name)
    out = {"t1": t1, "t2": t2, "steps": fm.steps, "seeds": int(seeds.shape[0]), "lipschitz": v.lipschitz}
    out["transport"] = verify_transport(path, v, t1, t2, P).summary()
    out["mask_invariance_cells"] = mask_invariance(v, 200)
    return out


def _orbit_measure(run: Run):
    from .dynamic_norm import OrbitMeasure

    f = _opt(run.options, run.cfg.section("norm"), "orbits_file")
    if f is None:
        raise ConfigError("norm needs an orbit CSV ([norm] orbits_file or --orbits)")
    times, orbits, weights = records.read_orbits(run.cfg.resolve(f))
    if orbits.shape[2] != run.cfg.n:
        raise ConfigError(f"orbits must have {run.cfg.n} coordinates")
    if abs(weights.sum() - 1.0) > 1e-6:
        raise InvalidMeasure(f"orbit weights sum to {weights.sum()!r}, not 1")
    return OrbitMeasure(times, orbits, weights / weights.sum())


def cmd_norm(run: Run) -> dict:
    from . import dynamic_norm as dn
    from .action import Path
    from .torus import make_grid
    from .transport import duality_gap

    sec = run.cfg.section("norm")
    mu = _orbit_measure(run)
    h2 = dn.h2_norm_orbits(mu)
    modes = int(_opt(run.options, sec, "rayleigh_modes", 64))
    fam = dn.default_family(mu.n, float(mu.times[0]), float(mu.times[-1]), size=modes)
    hold = dn.holder_check(mu)
    out = {
        "h2_norm": h2,
        "h2_squared": h2 * h2,
        "rayleigh_lower_bound": dn.rayleigh_lower_bound(mu, fam),
        "rayleigh_family_size": fam.size,
        "holder": {"sup_ratio": hold.sup_ratio, "bound": hold.bound, "pairs": hold.pairs},
    }
    alpha = _opt(run.options, sec, "tube_alpha")
    if alpha is not None:
        j = int(np.argmax(mu.weights))
        tube = dn.tube_measure_build(Path(float(mu.times[0]), float(mu.times[-1]), mu.orbits[j]) if _uniform(mu.times) else _resample(mu, j), float(alpha))
        core = dn.h2_norm_orbits(dn.OrbitMeasure(mu.times, mu.orbits[j : j + 1], np.ones(1))) ** 2
        span = tube.t1 - tube.t0
        out["tube"] = {
            "alpha": float(alpha),
            "orbit": j,
            "mass_mid": tube.mass(tube.t0 + 0.5 * span),
            "energy": tube.energy(),
            "energy_bound": core + dn.tube_energy_constant(mu.n) * span / float(alpha) ** 2,
            "lp_1.5": tube.lp_norm(1.5),
        }
    eps = _opt(run.options, sec, "psi_eps")
    if eps is not None:
        omega = float(_opt(run.options, sec, "omega", 1.0 + 0.5 / (mu.n + 1.0)))
        dn.check_omega(omega, mu.n)
        T = float(mu.times[-1] - mu.times[0])
        mu0, mu1 = mu.slice(float(mu.times[0])), mu.slice(float(mu.times[-1]))
        rep = duality_gap(mu0, mu1, run.cfg.pressure, T, make_grid(mu.n, run.cfg.m, T, run.cfg.K), seed=run.cfg.seed)
        psi = dn.regularized_dual_eval(rep.pairs["dual"].upper, run.cfg.pressure, float(eps), omega, mu0, mu1)
        out["psi"] = {"eps": float(eps), "omega": omega, "value": psi, "K": rep.K, "grid_tol": rep.grid_tol}
    return out


def _uniform(t: np.ndarray) -> bool:
    d = np.diff(t)
    return bool(np.allclose(d, d[0], rtol=1e-9, atol=0.0))


def _resample(mu, j: int):
    from .action import Path

    t = np.linspace(mu.times[0], mu.times[-1], mu.times.size)
    nodes = np.stack([np.interp(t, mu.times, mu.orbits[j][:, d]) for d in range(mu.n)], -1)
    return Path(float(t[0]), float(t[-1]), nodes)


def cmd_suite(run: Run) -> dict:
    from .suite import SuiteConfig, run_suite

    crit = run.options.get("criteria") or run.cfg.section("suite").get("criteria") or list(range(1, 12))
    bad = [c for c in crit if c not in range(1, 12)]
    if bad:
        raise ConfigError(f"criteria must lie in 1..11, got {bad}")
    cfg = SuiteConfig(seed=run.cfg.seed, criteria=tuple(sorted(set(int(c) for c in crit))))

    def progress(i, ok, seconds):
        if not run.args.quiet:
            print(f"criterion {i}: {'pass' if ok else 'FAIL'}", file=sys.stderr, flush=True)

    report, timings = run_suite(cfg, progress)
    # wall-clock times stay out of the JSON so repeated runs compare byte for byte
    p = records.write_csv(run.path("_timings.csv"), ["criterion", "seconds"], ((int(k), v) for k, v in timings.items()))
    run.artifacts.append(p.name)
    return report


COMMANDS = {
    "action": cmd_action,
    "hj": cmd_hj,
    "pair": cmd_pair,
    "ot": cmd_ot,
    "duality": cmd_duality,
    "flow": cmd_flow,
    "norm": cmd_norm,
    "suite": cmd_suite,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (TOML)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--emit-slices", action="store_true", help="also write per-node CSVs")
    common.add_argument("--quiet", action="store_true", help="do not echo the report")
    parser = argparse.ArgumentParser(prog="torusot", description="Optimal transport on the flat torus under a pressure field.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("action", parents=[common], help="minimal action between two points")
    p.add_argument("--x", type=float, nargs="+")
    p.add_argument("--y", type=float, nargs="+")
    p.add_argument("--t1", type=float)
    p.add_argument("--t2", type=float)
    p = sub.add_parser("hj", parents=[common], help="Hopf-Lax propagation of an initial field")
    p.add_argument("--direction", choices=("forward", "backward"))
    p.add_argument("--pair", action="store_true", help="build the reversible pair instead")
    sub.add_parser("pair", parents=[common], help="reversible pair from an initial field")
    for name in ("ot", "duality"):
        p = sub.add_parser(name, parents=[common], help="exact transport" if name == "ot" else "transport value against the dual bound")
        p.add_argument("--random-atoms", type=int, help="replace both measures by k random uniform atoms")
    p = sub.add_parser("flow", parents=[common], help="flow of the optimal velocity between two times")
    p.add_argument("--t1", type=float)
    p.add_argument("--t2", type=float)
    p.add_argument("--seeds", dest="seeds_file")
    p.add_argument("--from", dest="from_dir", help="output directory of a `duality --emit-slices` run")
    p = sub.add_parser("norm", parents=[common], help="kinetic norm diagnostics for orbit measures")
    p.add_argument("--orbits", dest="orbits_file")
    p.add_argument("--rayleigh-modes", type=int)
    p.add_argument("--tube", dest="tube_alpha", type=float)
    p.add_argument("--psi-eps", type=float)
    p.add_argument("--omega", type=float)
    p = sub.add_parser("suite", parents=[common], help="acceptance battery")
    p.add_argument("--criteria", type=int, nargs="+")
    return parser


RUN_OPTIONS = ("x", "y", "t1", "t2", "direction", "pair", "random_atoms", "seeds_file", "from_dir", "orbits_file", "rayleigh_modes", "tube_alpha", "psi_eps", "omega", "criteria")


def _prepare(args: argparse.Namespace) -> Run:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg = _replace(cfg, seed=args.seed)
    options = {k: getattr(args, k) for k in RUN_OPTIONS if getattr(args, k, None) not in (None, False)}
    # paths given on the command line are relative to the working directory
    for k in ("seeds_file", "from_dir", "orbits_file"):
        if k in options:
            options[k] = str(FsPath(options[k]).resolve())
    if "omega" in options:
        from .dynamic_norm import check_omega

        check_omega(options["omega"], cfg.n)
    if options.get("random_atoms"):
        from .config import MeasureSource

        k = int(options["random_atoms"])
        if k < 1:
            raise ConfigError("--random-atoms must be >= 1")
        src = MeasureSource(random=k, uniform=True)
        cfg = _replace(cfg, source=src, target=src)
    return Run(args.command, cfg, args, options)


def _replace(cfg: RunConfig, **kw) -> RunConfig:
    from dataclasses import replace

    return replace(cfg, **kw)


def _failing_module(exc: BaseException) -> str:
    module = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("torusot."):
            module = name.split(".", 1)[1]
    return module


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = FsPath(args.out)
    run = None
    try:
        _limit_threads(args.threads)
        run = _prepare(args)
        report = COMMANDS[args.command](run)
        report = {"command": args.command, "seed": run.cfg.seed, "report": report, "artifacts": sorted(run.artifacts)}
        text = records.dumps(report)
        out.mkdir(parents=True, exist_ok=True)
        run.path(".json").write_text(text)
        if not args.quiet:
            sys.stdout.write(text)
        return 0
    except (TorusOTError, OSError) as exc:
        code = exc.exit_code if isinstance(exc, TorusOTError) else 2
        error = {
            "command": args.command,
            "exit_code": code,
            "error": {"type": type(exc).__name__, "module": _failing_module(exc), "message": str(exc)},
        }
        text = json.dumps(error, sort_keys=True, indent=2) + "\n"
        try:
            out.mkdir(parents=True, exist_ok=True)
            name = f"{run.tag}_{args.command}_error.json" if run is not None else f"{args.command}_error.json"
            (out / name).write_text(text)
        except OSError:
            pass
        sys.stderr.write(text)
        return code


if __name__ == "__main__":
    sys.exit(main())
