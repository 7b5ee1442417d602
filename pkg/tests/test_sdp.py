import numpy as np
import pytest

from h2price.ascent import init_multiplier
from h2price.model import Mode, consumption, hydrogen_production
from h2price.oracle import enumerate_paths, exact_operational, tiny_instance, tiny_noise, tiny_plant
from h2price.scenario import support
from h2price.sdp import (
    OperationalError, build_grids, expected_consumption_profile, forward_law, initial_value, operational_policy,
    solve_operational, stage_operational_values, write_value_table,
)

KINDS = ("deterministic", "two", "three")


def _replay(vf, inst):
    """Probability-weighted cost and consumption of the tabulated policy over every path."""
    plant, noise = inst.plant, inst.noise
    d_idx, _, probs = enumerate_paths(noise)
    T = noise.horizon
    cost, cons = 0.0, np.zeros(T)
    for path, pr in zip(d_idx, probs):
        s, m = plant.s0, int(plant.m0)
        for h in range(T):
            mode, load, out = operational_policy(vf, s, m, h)
            e = consumption(load, Mode(m), mode, plant)
            d = support(noise, h).demand.values[path[h]]
            cost += pr * (vf.lam[h] * e + plant.c_backup * max(d - out, 0.0))
            cons[h] += pr * e
            s = s + hydrogen_production(load, Mode(m), mode, plant) - min(d, out)
            m = int(mode)
    return cost, cons


@pytest.mark.parametrize("kind", KINDS)
def test_matches_tree_enumeration(kind):
    inst = tiny_instance(kind)
    rng = np.random.default_rng(1)
    for lam in [init_multiplier(inst.plant).lam, rng.uniform(0, 0.5, inst.noise.horizon), np.zeros(3)]:
        vf = solve_operational(lam, inst.plant, inst.noise, inst.grids)
        assert initial_value(vf, inst.plant) == pytest.approx(exact_operational(inst, lam), abs=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_replay_recovers_value_and_forward_law(kind):
    inst = tiny_instance(kind)
    lam = init_multiplier(inst.plant).lam
    vf = solve_operational(lam, inst.plant, inst.noise, inst.grids)
    cost, cons = _replay(vf, inst)
    assert cost == pytest.approx(initial_value(vf, inst.plant), abs=1e-9)
    law = forward_law(vf, inst.plant, inst.noise)
    assert np.allclose(law.consumption, cons, atol=1e-9)
    assert np.allclose(law.dist.sum(axis=(1, 2)), 1.0)
    assert law.expected_cost.sum() == pytest.approx(cost, abs=1e-9)


def test_zero_cost_world():
    plant = tiny_plant(np.full(3, 0.1), s0=5.0)
    noise = tiny_noise(np.zeros(3), np.zeros(3))
    grids = build_grids(plant, noise, n_stock=21, n_load=2)
    vf = solve_operational(np.zeros(3), plant, noise, grids)
    assert np.all(vf.values[:, :, :] == 0)
    law = forward_law(vf, plant, noise)
    assert np.all(law.expected_cost == 0)


def test_no_production_single_stage():
    plant = tiny_plant(np.array([0.1]), s0=0.0)
    noise = tiny_noise(np.array([3.0]), np.array([0.0]))
    grids = build_grids(plant, noise, n_stock=21, n_load=2, n_out=4)
    vf = solve_operational(np.array([1e9]), plant, noise, grids)
    assert initial_value(vf, plant) == pytest.approx(plant.c_backup * 3.0)
    assert operational_policy(vf, 0.0, Mode.COLD, 0) == (Mode.COLD, 0.0, 0.0)


def test_cold_when_nothing_to_serve():
    plant = tiny_plant(np.full(3, 0.1), s0=10.0)
    noise = tiny_noise(np.zeros(3), np.zeros(3))
    grids = build_grids(plant, noise, n_stock=21, n_load=2)
    vf = solve_operational(np.full(3, 0.2), plant, noise, grids)
    assert np.all(expected_consumption_profile(vf, plant, noise) == 0)
    mode, load, out = operational_policy(vf, 10.0, Mode.START, 0)
    assert mode == Mode.COLD and load == 0.0 and out == 0.0


def test_deterministic_profile_equals_single_path():
    inst = tiny_instance("deterministic")
    vf = solve_operational(np.array([0.05, 0.3, 0.1]), inst.plant, inst.noise, inst.grids)
    _, cons = _replay(vf, inst)
    assert np.allclose(expected_consumption_profile(vf, inst.plant, inst.noise), cons, atol=1e-12)


def test_reference_kernel_agrees():
    inst = tiny_instance("two")
    lam = np.array([0.1, 0.2, 0.05])
    vf = solve_operational(lam, inst.plant, inst.noise, inst.grids)
    for h in range(3):
        for m in range(3):
            q = stage_operational_values(h, lam[h], vf.values[h + 1], inst.plant, inst.noise, inst.grids, m)
            assert np.allclose(q.min(axis=1), vf.values[h, :, m], atol=1e-9, equal_nan=True)
            finite = np.isfinite(vf.values[h, :, m])
            # tie-break: lowest control index among the minimizers
            first = np.argmax(q <= q.min(axis=1, keepdims=True) + 1e-12, axis=1)
            assert np.array_equal(first[finite], vf.policy[h, finite, m])


def test_concave_in_multiplier():
    inst = tiny_instance("three")
    rng = np.random.default_rng(3)
    f = lambda lam: initial_value(solve_operational(lam, inst.plant, inst.noise, inst.grids), inst.plant)
    for _ in range(10):
        a, b = rng.uniform(0, 0.6, (2, 3))
        t = rng.uniform()
        assert f(t * a + (1 - t) * b) >= t * f(a) + (1 - t) * f(b) - 1e-9


def test_default_dataset_monotone_in_stock(plant, noise):
    grids = build_grids(plant, noise, n_stock=60)
    vf = solve_operational(init_multiplier(plant).lam, plant, noise, grids)
    v = vf.values[:-1]
    both = np.isfinite(v[:, 1:, :]) & np.isfinite(v[:, :-1, :])
    assert np.all(np.diff(v, axis=1)[both] <= 1e-6)
    assert np.isfinite(initial_value(vf, plant))
    law = forward_law(vf, plant, noise)
    assert np.all(law.consumption >= 0) and np.all(law.consumption <= plant.e_max + 1e-9)


def test_infinite_state_raises_and_length_checked():
    inst = tiny_instance("two")
    vf = solve_operational(np.zeros(3), inst.plant, inst.noise, inst.grids)
    with pytest.raises(ValueError):
        solve_operational(np.zeros(2), inst.plant, inst.noise, inst.grids)
    bad = np.argwhere(~np.isfinite(vf.values[:3]))
    if len(bad):
        h, i, m = bad[0]
        with pytest.raises(OperationalError):
            operational_policy(vf, vf.grids.stock[i], m, h)


def test_value_table_csv(tmp_path):
    inst = tiny_instance("two")
    vf = solve_operational(np.zeros(3), inst.plant, inst.noise, inst.grids)
    path = tmp_path / "v.csv"
    write_value_table(vf, path, hours=[0])
    lines = path.read_text().splitlines()
    assert lines[0] == "hour,stock_kg,mode,value_eur,mode_cmd,load,h_out_kg"
    assert len(lines) == 1 + 21 * 3
