import time

import numpy as np
import pytest

from h2price.ascent import init_multiplier
from h2price.lp import solve_lp
from h2price.oracle import (
    ChainReport, ChainViolation, OracleError, TinyInstance, exact_dual_eval, exact_electricity,
    exact_operational, exact_primal, exact_relaxed_joint, extensive_form_value, saddle_price_bound, saddle_toy_lp,
    tiny_instance, tiny_noise, tiny_plant, verify_chain,
)
from h2price.sdp import build_grids, forward_law, solve_operational

KINDS = ("deterministic", "two", "three")


@pytest.fixture(scope="module")
def primals():
    return {k: exact_primal(tiny_instance(k)) for k in KINDS}


# frozen values from the first certified run
FROZEN_PRIMAL = {"deterministic": -14.40, "two": 47.30, "three": -4.07}


@pytest.mark.parametrize("kind", KINDS)
def test_primal_frozen(primals, kind):
    assert primals[kind] == pytest.approx(FROZEN_PRIMAL[kind], abs=5e-3)


@pytest.mark.parametrize("kind", KINDS)
def test_chain_at_initial_and_random_multipliers(primals, kind):
    inst = tiny_instance(kind)
    lam0 = init_multiplier(inst.plant).lam
    rng = np.random.default_rng(7)
    for lam in [lam0] + [lam0 * rng.uniform(0, 3, 3) for _ in range(4)]:
        rep = verify_chain(inst, lam, primal=primals[kind])
        assert rep.holds


def test_single_stage_served_from_stock():
    plant = tiny_plant(np.array([0.1]), s0=10.0)
    noise = tiny_noise(np.array([3.0]), np.array([0.0]))
    grids = build_grids(plant, noise, n_stock=21, n_load=2, n_out=4)
    # the full stock covers demand, so the plant stays cold and keeps the subsidy
    assert exact_primal(TinyInstance("t1", plant, noise, grids)) == pytest.approx(-plant.c_subsidy)


def test_symmetric_relabeling_invariance():
    base = tiny_instance("two")
    flipped = tiny_noise(np.full(3, 5.0), np.array([20.0, 30.0, 10.0]), demand_factors=(1.2, 0.8))
    inst = TinyInstance("flip", base.plant, flipped, base.grids, base.n_ppa)
    assert exact_primal(inst) == pytest.approx(exact_primal(base), abs=1e-12)


def test_zero_multiplier_operational_is_backup_only():
    inst = tiny_instance("two")
    vf = solve_operational(np.zeros(3), inst.plant, inst.noise, inst.grids)
    law = forward_law(vf, inst.plant, inst.noise)
    assert np.all(law.consumption >= 0)
    assert exact_operational(inst, np.zeros(3)) == pytest.approx(law.expected_cost.sum(), abs=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_weak_duality_random(primals, kind):
    inst = tiny_instance(kind)
    rng = np.random.default_rng(11)
    for _ in range(20):
        lam = rng.uniform(0, 0.5, 3)
        assert exact_dual_eval(inst, lam) <= primals[kind] + 1e-9


@pytest.mark.parametrize("kind", ["deterministic", "three"])
def test_additivity_of_split(kind):
    inst = tiny_instance(kind, horizon=2)
    rng = np.random.default_rng(5)
    for lam in (np.array([0.08, 0.08]), rng.uniform(0, 0.4, 2)):
        assert exact_relaxed_joint(inst, lam) == pytest.approx(exact_dual_eval(inst, lam), abs=1e-9)


def test_surrogate_electricity_below_subsidy_version():
    inst = tiny_instance("three")
    lam = init_multiplier(inst.plant).lam
    assert exact_electricity(inst, lam, surrogate=True) <= exact_electricity(inst, lam) + 1e-9


def test_extensive_form_below_discrete_enumeration():
    inst = tiny_instance("three")
    lam = init_multiplier(inst.plant).lam
    assert extensive_form_value(lam, inst.plant, inst.noise) <= exact_electricity(inst, lam, surrogate=True) + 1e-9


def test_chain_violation_is_structured():
    rep = ChainReport(1.0, 0.0, 2.0, 3.0)
    assert not rep.holds
    err = ChainViolation(rep)
    assert err.report is rep and "violated" in str(err)
    inst = tiny_instance("deterministic")
    with pytest.raises(ChainViolation):
        verify_chain(inst, init_multiplier(inst.plant).lam, primal=-1e6)


def test_budget_exceeded():
    plant = tiny_plant(np.full(4, 0.1))
    noise = tiny_noise(np.full(4, 5.0), np.full(4, 10.0), demand_factors=np.linspace(0.5, 1.5, 6),
                       pv_factors=np.linspace(0.5, 1.5, 6))
    with pytest.raises(OracleError, match="budget"):
        TinyInstance("big", plant, noise, build_grids(plant, noise, n_stock=21, n_load=2))


def test_saddle_price_bound_on_toy_problems():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 10:
        alpha, beta = rng.uniform(0.05, 0.3, 2), rng.uniform(0.05, 0.1, 2)
        a, b = np.full(2, 0.8), np.full(2, 0.2)
        lp = saddle_toy_lp(alpha, beta, a, b, rng.uniform(1, 3, 2), rng.uniform(0.5, 3, 2))
        sol = solve_lp(lp)
        assert sol.optimal
        x, y, lam = sol.x[:2], sol.x[2:4], sol.duals[:2]
        for h in range(2):
            if x[h] > 1e-7 and y[h] > 1e-7:
                assert lam[h] >= saddle_price_bound(alpha[h], beta[h], a[h], b[h]) - 1e-9
                checked += 1
    assert time.perf_counter() - t0 < 5
