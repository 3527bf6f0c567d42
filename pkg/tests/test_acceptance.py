"""Acceptance battery.

Runs `torusot suite` twice in separate processes, then re-checks every recorded
metric against the literal thresholds below and prints one PASS/FAIL line per
criterion.  Runnable under pytest or directly: `python tests/test_acceptance.py`.
"""
import csv
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import pytest

RUNTIME_LIMIT = {1: 5, 2: 60, 3: 120, 4: 60, 5: 120, 6: 600, 7: 300, 8: 120, 9: 120, 10: 120, 11: 120}
TOTAL_LIMIT = 1800


def _launch(out: Path) -> subprocess.Popen:
    cmd = [sys.executable, "-m", "torusot", "suite", "--seed", "0", "--out", str(out), "--quiet"]
    return subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE)


def run_twice(root: Path) -> dict:
    dirs = [root / "run_a", root / "run_b"]
    procs = [_launch(d) for d in dirs]
    for p in procs:
        _, err = p.communicate()
        assert p.returncode == 0, err.decode()
    reports = [next(d.glob("*_suite.json")) for d in dirs]
    timings = {}
    for row in csv.DictReader(next(dirs[0].glob("*_suite_timings.csv")).open()):
        timings[int(row["criterion"])] = float(row["seconds"])
    return {
        "report": json.loads(reports[0].read_text())["report"],
        "bytes": [r.read_bytes() for r in reports],
        "timings": timings,
    }


def _cases(crit: dict) -> dict:
    return {k: v for k, v in crit.items() if isinstance(v, dict)}


def check_1(c):
    return c["max_error"] <= 1e-8 and c["trials"] == 100, f"max |J - |x-y|^2/2dt| = {c['max_error']:.2e}"


def check_2(c):
    ok = c["min_slack"] >= -2e-3 and c["max_attainment_gap"] <= 2e-3 and c["triples"] == 50
    return ok, f"min slack {c['min_slack']:.2e}, attainment gap {c['max_attainment_gap']:.2e}"


def check_3(c):
    fr = {k: v["pass_fraction"] for k, v in _cases(c).items()}
    return all(f >= 0.8 for f in fr.values()) and len(fr) == 2, f"pass fractions {fr}"


def check_4(c):
    return c["max_defect"] <= 2 * c["grid_tol"], f"defect {c['max_defect']:.2e} vs 2*grid_tol {2 * c['grid_tol']:.2e}"


def check_5(c):
    gt = c["grid_tol"]
    ok = True
    for rec in _cases(c).values():
        ok &= rec["min_order"] >= -1e-9 and rec["endpoint_gap"] <= 1e-9
    z = c["zero"]
    ok &= z["sup_gap"] <= 1e-3 and z["legendre_match"] <= 2 * gt
    return ok, f"P=0 sup gap {z['sup_gap']:.2e}, legendre match {z['legendre_match']:.2e}"


def check_6(c):
    ok, worst = True, 0.0
    cases = _cases(c)
    for rec in cases.values():
        ok &= rec["relative_gap"] <= 2e-2
        ok &= rec["gap"] >= -2 * rec["grid_tol"]
        ok &= abs(rec["gap"]) <= abs(rec["gap_coarse"]) + 1e-15
        worst = max(worst, abs(rec["relative_gap"]))
    return ok and len(cases) == 4, f"max |relative gap| {worst:.2e} over {len(cases)} problems"


def check_7(c):
    ok, parts = True, []
    cases = _cases(c)
    for name, rec in cases.items():
        ok &= rec["w1"] <= 1e-3 and abs(rec["cost_gap"]) <= 3 * rec["grid_tol"]
        if "closed_form_defect" in rec:
            ok &= rec["closed_form_defect"] <= 1e-4
            parts.append(f"{name} closed-form {rec['closed_form_defect']:.1e}")
    w1 = max(r["w1"] for r in cases.values())
    return ok and len(cases) == 4, f"max W1 {w1:.1e}; " + ", ".join(parts)


def check_8(c):
    cells = {k: v["max_cells"] for k, v in _cases(c).items()}
    return all(x <= 1.0 for x in cells.values()) and len(cells) == 4, f"max drift {max(cells.values()):.2f} cells"


def check_9(c):
    ok = c["h2_error"] <= 1e-8 and c["rayleigh_excess"] <= 1e-8 and c["single_orbit_ratio"] >= 0.9
    ok &= c["single_atom_error"] <= 1e-10 and c["family_size"] == 64
    return ok, f"h2 err {c['h2_error']:.1e}, ratio {c['single_orbit_ratio']:.3f}, atom err {c['single_atom_error']:.1e}"


def check_10(c):
    target = 0.5 / 1.5
    ok = c["mass_error"] <= 1e-6 and abs(c["energy_slope"] + 2.0) <= 0.2 and c["c1_spread"] <= 0.1
    ok &= abs(c["lp_slope"] - target) <= 0.1 * target
    return ok, f"mass err {c['mass_error']:.1e}, energy slope {c['energy_slope']:.3f}, Lp slope {c['lp_slope']:.4f}"


def check_11(c):
    ok, worst = True, -float("inf")
    for rec in _cases(c).values():
        for key in ("psi_0.1", "psi_0.01"):
            excess = rec[key] - rec["K"]
            ok &= excess <= 2 * rec["grid_tol"]
            worst = max(worst, excess)
    return ok, f"max psi - K {worst:.2e}"


CHECKS = {i: globals()[f"check_{i}"] for i in range(1, 12)}


@pytest.fixture(scope="module")
def suite_runs(tmp_path_factory):
    return run_twice(tmp_path_factory.mktemp("acceptance"))


def verdict(runs, i):
    if i == 12:
        total = sum(runs["timings"].values())
        ok = runs["bytes"][0] == runs["bytes"][1] and total < TOTAL_LIMIT
        return ok, f"byte-identical reports: {runs['bytes'][0] == runs['bytes'][1]}, suite time {total:.0f} s"
    ok, detail = CHECKS[i](runs["report"]["criteria"][str(i)])
    secs = runs["timings"][i]
    ok &= secs < RUNTIME_LIMIT[i]
    return ok, f"{detail}; {secs:.1f} s"


@pytest.mark.parametrize("i", range(1, 13))
def test_criterion(suite_runs, capsys, i):
    ok, detail = verdict(suite_runs, i)
    with capsys.disabled():
        print(f"\ncriterion {i}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        runs = run_twice(Path(tmp))
    results = [verdict(runs, i) for i in range(1, 13)]
    for i, (ok, detail) in enumerate(results, 1):
        print(f"criterion {i}: {'PASS' if ok else 'FAIL'} ({detail})")
    sys.exit(0 if all(ok for ok, _ in results) else 1)
