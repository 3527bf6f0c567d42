"""Two-atom transport under the single-mode pressure: K, E per seed, flow check."""
import argparse

from torusot.flow import build_measure_path, lipschitz_extend, velocity_on_k0, verify_transport
from torusot.suite import mode_pressure, two_atom_problem
from torusot.torus import make_grid
from torusot.transport import duality_gap


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m", type=int, default=512)
    ap.add_argument("--K", type=int, default=8)
    args = ap.parse_args()
    P = mode_pressure()
    mu0, mu1 = two_atom_problem()
    rep = duality_gap(mu0, mu1, P, 1.0, make_grid(1, args.m, 1.0, args.K))
    print(f"K = {rep.K:.8f}  E_best = {rep.E_best:.8f} ({rep.best_seed})  gap = {rep.gap:+.2e}  grid_tol = {rep.grid_tol:.2e}")
    for name, e in rep.E_by_seed.items():
        print(f"  E[{name}] = {e:.8f}")
    print(f"Monge map: {rep.plan.monge_map}")
    v = lipschitz_extend(velocity_on_k0(rep.pairs["dual"]))
    tr = verify_transport(build_measure_path(rep.plan, P), v, 0.25, 0.75, P)
    print(f"flow: W1 = {tr.w1:.2e}, flow cost - K = {tr.cost_gap:+.2e}, steps = {tr.steps}")


if __name__ == "__main__":
    main()
