"""Optimal transport on the flat torus driven by a prescribed pressure field."""
from .action import Path, minimize_action, torus_action
from .dynamic_norm import OrbitMeasure, h2_norm_orbits, rayleigh_lower_bound, regularized_dual_eval, tube_measure_build
from .errors import TorusOTError
from .flow import build_measure_path, integrate_flow, lipschitz_extend, velocity_on_k0, verify_transport
from .hj import GridFunction, hopf_lax_step, make_reversible_pair, propagate
from .pressure import Amplitude, Mode, PressureSpec, eval_P, zero_pressure
from .torus import make_grid, torus_distance, wrap
from .transport import DiscreteMeasure, duality_gap, solve_kantorovich, wasserstein

__version__ = "0.1.0"
