"""Acceptance gate: one pass/fail line per criterion, printed in the terminal summary.

Criteria 6 and 7 read the full-scale artifacts written by ``scripts/run_pipeline.py default``
under results/default and run the coarse pipeline live.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from h2price.ascent import init_multiplier
from h2price.cli import main
from h2price.config import bundled_config
from h2price.lp import solve_lp
from h2price.model import beta_upper_bound, subsidy_cost, surrogate_final_cost
from h2price.oracle import (
    exact_operational, exact_primal, extensive_form_value, saddle_price_bound, saddle_toy_lp, tiny_instance, tiny_noise,
    tiny_plant, verify_chain,
)
from h2price.sddp import sddp_solve, solve_stage
from h2price.sdp import initial_value, solve_operational

from conftest import record_criterion

ROOT = Path(__file__).resolve().parents[1]
KINDS = ("deterministic", "two", "three")


def test_criterion_1_duality_chain():
    t0 = time.perf_counter()
    failures, worst = [], np.inf
    for kind in KINDS:
        inst = tiny_instance(kind)
        primal = exact_primal(inst)
        lam0 = init_multiplier(inst.plant).lam
        rng = np.random.default_rng(2024)
        for i, lam in enumerate([lam0] + [lam0 * rng.uniform(0, 3, len(lam0)) for _ in range(20)]):
            rep = verify_chain(inst, lam, primal=primal, tolerance=1e-6, raise_on_violation=False)
            worst = min(worst, rep.dual_exact - rep.dual_surrogate, rep.primal - rep.dual_exact,
                        rep.policy - rep.primal)
            if not rep.holds:
                failures.append((kind, i, rep))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    record_criterion(1, ok, f"3 instances x 21 multipliers, smallest slack {worst:.3g}, {elapsed:.1f}s")
    assert not failures, failures
    assert elapsed < 60


def test_criterion_2_sdp_matches_enumeration():
    t0 = time.perf_counter()
    err = 0.0
    for kind in KINDS:
        inst = tiny_instance(kind)
        rng = np.random.default_rng(1)
        for lam in [init_multiplier(inst.plant).lam] + [rng.uniform(0, 0.5, 3) for _ in range(5)]:
            vf = solve_operational(lam, inst.plant, inst.noise, inst.grids)
            err = max(err, abs(initial_value(vf, inst.plant) - exact_operational(inst, lam)))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-9 and elapsed < 10
    record_criterion(2, ok, f"max error {err:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_sddp_convergence_and_cut_validity():
    t0 = time.perf_counter()
    plant = tiny_plant(np.array([0.2, 0.1, 0.3]))
    pv = np.array([20.0, 30.0, 10.0])
    rel, violations = 0.0, 0
    rng = np.random.default_rng(3)
    for factors in ((1.0,), (0.5, 1.5)):
        noise = tiny_noise(np.full(3, 5.0), pv, pv_factors=factors)
        for lam in (init_multiplier(plant).lam, np.array([0.3, 0.01, 0.2]), np.array([0.5, 0.4, 0.6])):
            ref = extensive_form_value(lam, plant, noise)
            res = sddp_solve(lam, plant, noise, iters=50, seed=0)
            rel = max(rel, abs(res.lower_bound - ref) / max(1.0, abs(ref)))
            for h in range(3):
                for P, Q in zip(rng.uniform(0, plant.ppa_cap, 200), rng.uniform(plant.q_min, plant.q_max, 200)):
                    exact = solve_stage(h, P, Q, lam, plant, noise, res.cuts).objective
                    violations += res.cuts.evaluate(h, P, Q) > exact + 1e-6 * (1 + abs(exact))
    elapsed = time.perf_counter() - t0
    ok = rel <= 1e-6 and violations == 0 and elapsed < 60
    record_criterion(3, ok, f"max relative gap to extensive LP {rel:.2e}, {violations} invalid cuts, {elapsed:.1f}s")
    assert ok


def test_criterion_4_surrogate_below_subsidy(plant):
    q = np.linspace(plant.q_min, plant.q_max, 10_000)
    bad = int(np.sum(surrogate_final_cost(q, 0.0, 26.5, plant.c_subsidy) > subsidy_cost(q, plant.c_subsidy)))
    bound = beta_upper_bound(plant.c_subsidy, plant.q_max)
    ok = bad == 0 and abs(plant.q_max - 188563.2) < 1e-6 and bound >= 26.5
    record_criterion(4, ok, f"Q_max {plant.q_max:.1f}, slope bound {bound:.4f}, {bad} violations in 1e4 points")
    assert ok


def test_criterion_5_saddle_price_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    checked, bad = 0, 0
    while checked < 10:
        alpha, beta = rng.uniform(0.05, 0.3, 2), rng.uniform(0.05, 0.1, 2)
        a, b = np.full(2, 0.8), np.full(2, 0.2)
        sol = solve_lp(saddle_toy_lp(alpha, beta, a, b, rng.uniform(1, 3, 2), rng.uniform(0.5, 3, 2)))
        x, y, lam = sol.x[:2], sol.x[2:4], sol.duals[:2]
        for h in range(2):
            if sol.optimal and x[h] > 1e-7 and y[h] > 1e-7:
                checked += 1
                bad += lam[h] < saddle_price_bound(alpha[h], beta[h], a[h], b[h]) - 1e-9
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 5
    record_criterion(5, ok, f"{checked} saddle multipliers checked, {bad} below the bound, {elapsed:.2f}s")
    assert ok


@pytest.fixture(scope="module")
def coarse_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("coarse")
    t0 = time.perf_counter()
    code = main(["solve", "--config", str(bundled_config("coarse")), "--out", str(out), "-q"])
    elapsed = time.perf_counter() - t0
    summary = json.loads((out / "summary.json").read_text()) if code == 0 else None
    return code, elapsed, summary


def _full_run():
    path = ROOT / "results" / "default" / "run.json"
    return json.loads(path.read_text()) if path.exists() else None


def test_criterion_6_full_scale_gap(coarse_run):
    code, elapsed, coarse = coarse_run
    full = _full_run()
    notes = []
    ok = code == 0 and full is not None
    if code == 0:
        c_ok = elapsed <= 300 and coarse["final_gap_rel"] <= 0.15
        notes.append(f"coarse gap {100 * coarse['final_gap_rel']:.4f}% in {elapsed:.0f}s")
        ok &= c_ok
    if full is None:
        notes.append("full-scale artifacts missing, run scripts/run_pipeline.py default")
    else:
        s = full["solve"]
        late = {int(k): v for k, v in s["subsidy_rate_by_iteration"].items() if int(k) > 30}
        granted = min(late.values()) if late else 0.0
        minutes = full["wall_time_s"]["solve"] / 60
        f_ok = (s["iterations"] == 51 and s["gap_rel"] <= 0.10 and s["final_gap_rel"] <= 0.10
                and granted >= 0.99 and minutes <= 30)
        notes.append(f"full gap {100 * s['gap_rel']:.4f}% (final iterate {100 * s['final_gap_rel']:.4f}%), "
                     f"subsidy granted on at least {100 * granted:.1f}% of paths after iteration 30, "
                     f"solve {minutes:.1f} min on 1 core")
        ok &= f_ok
    record_criterion(6, ok, "; ".join(notes))
    assert ok


def test_criterion_7_invariants(coarse_run):
    code, _, coarse = coarse_run
    full = _full_run()
    counts = {}
    if code == 0:
        counts["coarse final evaluation"] = sum(coarse["final_violations"].values())
    if full is not None:
        sim = full["simulate"]
        counts[f"full simulate ({sim['paths']} paths)"] = sum(sim["violations"].values())
        counts["full final evaluation"] = sum(full["solve"]["final_violations"].values())
    ok = code == 0 and full is not None and full["simulate"]["paths"] >= 5000 and not any(counts.values())
    record_criterion(7, ok, ", ".join(f"{k}: {v} violations" for k, v in counts.items()) or "no runs")
    assert ok
