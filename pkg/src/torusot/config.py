"""Run configuration: one TOML file, validated into plain dataclasses.

Layout (every table optional):

    seed = 0
    [grid]      n, m, K, T
    [pressure]  dimension, offset, modes = [{k = [..], a = {...}, b = {...}}]
                amplitude tables: {kind = "poly", coeffs = [..]} or {kind = "cos", amp, omega, phase}
    [measures.source], [measures.target]
                atoms = [[..], ..] with optional weights, or file = "x.csv", or random = k
                (random atoms take snap = m, uniform, min_separation)
    [action]    x, y, t1, t2, nodes
    [hj]        direction, phi0 = [{k = [..], cos = c, sin = s}], phi0_file, eps_rev
    [duality]   n_random
    [flow]      t1, t2, seeds_file, from_dir, time_interp
    [norm]      orbits_file, rayleigh_modes, tube_alpha, psi_eps, omega
    [suite]     criteria = [..]
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np
import tomli

from .errors import ConfigError
from .pressure import Amplitude, Mode, PressureSpec
from .torus import make_grid

SECTIONS = {"seed", "grid", "pressure", "measures", "action", "hj", "duality", "flow", "norm", "suite"}
OPTIONS = {
    "grid": {"n", "m", "K", "T"},
    "action": {"x", "y", "t1", "t2", "nodes"},
    "hj": {"direction", "phi0", "phi0_file", "eps_rev"},
    "duality": {"n_random"},
    "flow": {"t1", "t2", "seeds_file", "from_dir", "time_interp"},
    "norm": {"orbits_file", "rayleigh_modes", "tube_alpha", "psi_eps", "omega"},
    "suite": {"criteria"},
}
DEFAULT_GRID = {"n": 1, "m": 512, "K": 8, "T": 1.0}
DEFAULT_MEASURES = {
    "source": {"atoms": [[0.25], [0.5]], "weights": [0.5, 0.5]},
    "target": {"atoms": [[0.375], [0.75]], "weights": [0.5, 0.5]},
}


@dataclass(frozen=True)
class MeasureSource:
    atoms: tuple | None = None
    weights: tuple | None = None
    file: str | None = None
    random: int | None = None
    snap: int | None = None
    uniform: bool = True
    min_separation: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    n: int
    m: int
    K: int
    T: float
    pressure: PressureSpec
    source: MeasureSource
    target: MeasureSource
    seed: int = 0
    options: dict = field(default_factory=dict)
    base_dir: str = "."
    raw: dict = field(default_factory=dict)

    @property
    def grid(self):
        return make_grid(self.n, self.m, self.T, self.K)

    def section(self, name: str) -> dict:
        return dict(self.options.get(name, {}))

    def resolve(self, path: str) -> FsPath:
        p = FsPath(path)
        return p if p.is_absolute() else FsPath(self.base_dir) / p

    def digest(self, extra: dict | None = None) -> str:
        """Short hash of the canonical config (plus run options) for artifact names."""
        blob = json.dumps({"config": self.raw, "seed": self.seed, "extra": extra or {}}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:10]


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _number(table: dict, key: str, default=None, kind=float):
    if key not in table:
        _require(default is not None, f"missing required key {key!r}")
        return default
    v = table[key]
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), f"{key!r} must be a number, got {v!r}")
    if kind is int:
        _require(float(v).is_integer(), f"{key!r} must be an integer, got {v!r}")
        return int(v)
    return float(v)


def parse_amplitude(table) -> Amplitude:
    _require(isinstance(table, dict), f"amplitude must be a table, got {table!r}")
    kind = table.get("kind", "poly")
    if kind == "poly":
        coeffs = table.get("coeffs", [0.0])
        _require(isinstance(coeffs, list) and all(isinstance(c, (int, float)) for c in coeffs), "coeffs must be a list of numbers")
        return Amplitude("poly", tuple(float(c) for c in coeffs))
    if kind == "cos":
        return Amplitude.cosine(_number(table, "amp", 0.0), _number(table, "omega", 0.0), _number(table, "phase", 0.0))
    raise ConfigError(f"amplitude kind must be 'poly' or 'cos', got {kind!r}")


def parse_pressure(table: dict, n: int) -> PressureSpec:
    _require(isinstance(table, dict), "[pressure] must be a table")
    unknown = set(table) - {"dimension", "offset", "modes"}
    _require(not unknown, f"unknown keys in [pressure]: {sorted(unknown)}")
    dim = _number(table, "dimension", n, int)
    _require(dim == n, f"pressure dimension {dim} does not match grid dimension {n}")
    modes = []
    for md in table.get("modes", []):
        _require(isinstance(md, dict) and "k" in md, "each pressure mode needs a wavevector k")
        k = md["k"]
        _require(isinstance(k, list) and all(isinstance(c, int) for c in k), f"k must be a list of integers, got {k!r}")
        modes.append(Mode(tuple(k), parse_amplitude(md.get("a", {})), parse_amplitude(md.get("b", {}))))
    return PressureSpec(dim, tuple(modes), _number(table, "offset", 0.0))


def parse_measure(table: dict, name: str) -> MeasureSource:
    _require(isinstance(table, dict), f"[measures.{name}] must be a table")
    unknown = set(table) - {"atoms", "weights", "file", "random", "snap", "uniform", "min_separation"}
    _require(not unknown, f"unknown keys in [measures.{name}]: {sorted(unknown)}")
    given = [k for k in ("atoms", "file", "random") if k in table]
    _require(len(given) == 1, f"[measures.{name}] needs exactly one of atoms, file, random")
    atoms = weights = None
    if "atoms" in table:
        a = table["atoms"]
        _require(isinstance(a, list) and a and all(isinstance(p, list) for p in a), "atoms must be a list of coordinate lists")
        atoms = tuple(tuple(float(c) for c in p) for p in a)
        if "weights" in table:
            _require(len(table["weights"]) == len(atoms), "one weight per atom")
            weights = tuple(float(w) for w in table["weights"])
    return MeasureSource(
        atoms=atoms,
        weights=weights,
        file=table.get("file"),
        random=_number(table, "random", 0, int) if "random" in table else None,
        snap=_number(table, "snap", 0, int) if "snap" in table else None,
        uniform=bool(table.get("uniform", True)),
        min_separation=_number(table, "min_separation", 0.0),
    )


def _check_options(raw: dict) -> dict:
    opts = {}
    for name, keys in OPTIONS.items():
        if name == "grid":
            continue
        table = raw.get(name, {})
        _require(isinstance(table, dict), f"[{name}] must be a table")
        unknown = set(table) - keys
        _require(not unknown, f"unknown keys in [{name}]: {sorted(unknown)}")
        opts[name] = table
    norm = opts["norm"]
    if "omega" in norm:
        from .dynamic_norm import check_omega

        check_omega(_number(norm, "omega"), int(raw.get("grid", {}).get("n", 1)))
    if "psi_eps" in norm:
        _require(_number(norm, "psi_eps") > 0, "psi_eps must be positive")
    if "tube_alpha" in norm:
        _require(_number(norm, "tube_alpha") > 0, "tube_alpha must be positive")
    hj = opts["hj"]
    if "direction" in hj:
        _require(hj["direction"] in ("forward", "backward"), f"direction must be 'forward' or 'backward', got {hj['direction']!r}")
    return opts


def parse_config(raw: dict, base_dir: str = ".") -> RunConfig:
    _require(isinstance(raw, dict), "config must be a table")
    unknown = set(raw) - SECTIONS
    _require(not unknown, f"unknown top-level keys: {sorted(unknown)}")
    g = dict(DEFAULT_GRID)
    gt = raw.get("grid", {})
    _require(isinstance(gt, dict), "[grid] must be a table")
    unknown = set(gt) - OPTIONS["grid"]
    _require(not unknown, f"unknown keys in [grid]: {sorted(unknown)}")
    g.update(gt)
    n, m, K = (_number(g, k, None, int) for k in ("n", "m", "K"))
    T = _number(g, "T")
    make_grid(n, m, T, K)  # validates ranges
    pressure = parse_pressure(raw.get("pressure", {}), n)
    meas = dict(DEFAULT_MEASURES)
    mt = raw.get("measures", {})
    _require(isinstance(mt, dict) and set(mt) <= {"source", "target"}, "[measures] holds only source and target")
    meas.update(mt)
    seed = _number(raw, "seed", 0, int)
    _require(seed >= 0, "seed must be nonnegative")
    return RunConfig(
        n=n,
        m=m,
        K=K,
        T=T,
        pressure=pressure,
        source=parse_measure(meas["source"], "source"),
        target=parse_measure(meas["target"], "target"),
        seed=seed,
        options=_check_options(raw),
        base_dir=str(base_dir),
        raw=raw,
    )


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return parse_config({})
    p = FsPath(path)
    if not p.is_file():
        raise ConfigError(f"no such config file: {p}")
    try:
        raw = tomli.loads(p.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return parse_config(raw, str(p.parent))


def build_measure(cfg: RunConfig, src: MeasureSource, rng: np.random.Generator):
    from .records import read_measure
    from .transport import DiscreteMeasure, random_measure

    if src.atoms is not None:
        pts = np.array(src.atoms, dtype=float)
        _require(pts.shape[1] == cfg.n, f"atoms must have {cfg.n} coordinates")
        return DiscreteMeasure.create(pts, None if src.weights is None else np.array(src.weights))
    if src.file is not None:
        pts, w = read_measure(cfg.resolve(src.file))
        _require(pts.shape[1] == cfg.n, f"{src.file}: expected {cfg.n} coordinates")
        return DiscreteMeasure.create(pts, w)
    lattice = make_grid(cfg.n, src.snap, cfg.T, cfg.K) if src.snap else None
    return random_measure(cfg.n, src.random, rng, lattice, uniform=src.uniform, min_separation=src.min_separation)

