import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from h2price.lp import (
    EQ, GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LinearProgram, LpError, dual_objective, primal_residual,
    solve_lp, solve_or_raise, write_lp_format,
)


def _lp(c, A, b, sense, lb=None, ub=None):
    n = len(c)
    lb = np.zeros(n) if lb is None else lb
    ub = np.full(n, np.inf) if ub is None else ub
    return LinearProgram(np.asarray(c, float), np.asarray(A, float), np.asarray(b, float), np.asarray(sense),
                         lb, ub)


def _vertex_min(c, A, b, ub):
    """min c.x over {A x <= b, 0 <= x <= ub} by enumerating basic solutions."""
    n = len(c)
    G = np.vstack([A, -np.eye(n), np.eye(n)])
    h = np.concatenate([b, np.zeros(n), ub])
    best = np.inf
    for rows in itertools.combinations(range(len(h)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, c @ x)
    return best


def _check_kkt(lp, sol):
    assert primal_residual(lp, sol.x) <= 1e-8 * (1 + np.abs(lp.b).max(initial=0))
    assert abs(dual_objective(lp, sol) - sol.objective) <= 1e-7 * (1 + abs(sol.objective))


def test_single_bound_reference():
    sol = solve_lp(_lp([1.0], [[1.0]], [3.0], [GE], lb=np.array([-np.inf])))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(3.0) and sol.objective == pytest.approx(3.0)
    assert sol.duals[0] == pytest.approx(1.0)


def test_face_reference():
    lp = _lp([-1.0, -1.0], [[1.0, 1.0]], [1.0], [LE])
    sol = solve_lp(lp)
    assert sol.objective == pytest.approx(-1.0) and sol.x.sum() == pytest.approx(1.0)
    _check_kkt(lp, sol)


def test_status_reporting():
    infeas = _lp([1.0], [[1.0], [1.0]], [1.0, 2.0], [LE, GE])
    assert solve_lp(infeas).status == INFEASIBLE
    unb = _lp([-1.0], [[1.0]], [0.0], [GE])
    assert solve_lp(unb).status == UNBOUNDED
    with pytest.raises(LpError, match="infeasible"):
        solve_or_raise(infeas, "probe")


def test_malformed_input():
    with pytest.raises(ValueError):
        _lp([1.0, 2.0], [[1.0]], [1.0], [LE])
    with pytest.raises(ValueError):
        _lp([1.0], [[1.0]], [1.0], [2])
    with pytest.raises(ValueError):
        _lp([1.0], [[1.0]], [1.0], [LE], lb=np.array([2.0]), ub=np.array([1.0]))


@pytest.mark.parametrize("seed", range(15))
def test_vertex_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    n = m = 5
    A = rng.normal(size=(m, n))
    b = rng.uniform(0.5, 2.0, m)
    ub = rng.uniform(0.5, 3.0, n)
    c = rng.normal(size=n)
    lp = _lp(c, A, b, [LE] * m, np.zeros(n), ub)
    sol = solve_lp(lp)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(_vertex_min(c, A, b, ub), abs=1e-8)
    _check_kkt(lp, sol)


@pytest.mark.parametrize("seed", range(10))
def test_random_dense_against_scipy(seed):
    rng = np.random.default_rng(100 + seed)
    m, n = 20, 30
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, n)
    sense = rng.choice([LE, EQ, GE], m, p=[0.5, 0.2, 0.3])
    b = A @ x0 + np.where(sense == LE, 0.5, np.where(sense == GE, -0.5, 0.0))
    lb = np.where(rng.random(n) < 0.2, -np.inf, 0.0)
    ub = np.where(rng.random(n) < 0.5, 2.0, np.inf)
    c = rng.normal(size=n) + 0.1
    lp = _lp(c, A, b, sense, lb, ub)
    sol = solve_lp(lp)
    ref = linprog(c, A_ub=np.vstack([A[sense == LE], -A[sense == GE]]),
                  b_ub=np.concatenate([b[sense == LE], -b[sense == GE]]),
                  A_eq=A[sense == EQ], b_eq=b[sense == EQ], bounds=list(zip(lb, ub)), method="highs")
    if ref.status == 3:
        assert sol.status == UNBOUNDED
        return
    assert ref.status == 0 and sol.status == OPTIMAL
    assert sol.objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-7)
    _check_kkt(lp, sol)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.01, 0.01))
def test_rhs_sensitivity(seed, delta):
    rng = np.random.default_rng(seed)
    m, n = 4, 6
    A = rng.uniform(0.1, 1.0, size=(m, n))
    b = rng.uniform(1.0, 2.0, m)
    c = -rng.uniform(0.1, 1.0, n)
    lp = _lp(c, A, b, [LE] * m, np.zeros(n), np.full(n, 5.0))
    sol = solve_lp(lp)
    i = seed % m
    b2 = b.copy()
    b2[i] += delta
    sol2 = solve_lp(_lp(c, A, b2, [LE] * m, np.zeros(n), np.full(n, 5.0)))
    # the value function is convex in b, so the dual is a subgradient
    assert sol2.objective >= sol.objective + sol.duals[i] * delta - 1e-8


def test_lp_export(tmp_path):
    lp = _lp([1.0, -2.0], [[1.0, 1.0]], [4.0], [LE], np.zeros(2), np.array([np.inf, 3.0]))
    path = tmp_path / "m.lp"
    write_lp_format(lp, path)
    text = path.read_text()
    assert text.startswith("Minimize") and "<= 4" in text and "End" in text
