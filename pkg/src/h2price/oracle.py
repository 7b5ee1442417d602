"""Brute-force exact solvers for tiny instances.

Everything here enumerates the scenario tree with memoization. The control grids
are the ones used by the main solvers, so agreement is exact rather than
asymptotic. Tiny instances keep every reachable stock on the stock grid, which
makes interpolation in the operational tables exact as well.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .lp import GE, LE, OPTIMAL, LinearProgram, solve_lp
from .model import ElectrolyserSpec, Mode, PlantSpec, State, control_consumption_table, subsidy_cost, \
    surrogate_final_cost
from .policy import PolicyContext, one_step_decision, simulate_on_indices, step_state
from .scenario import DiscreteDistribution, NoiseModel, StageDistribution, support
from .sddp import grid_floor, sddp_solve
from .sdp import OperationalGrids, build_grids, initial_value, solve_operational

MAX_LEAVES = 100_000


class OracleError(RuntimeError):
    pass


class ChainViolation(OracleError):
    def __init__(self, report: "ChainReport"):
        super().__init__(f"duality chain violated: {report}")
        self.report = report


@dataclass
class TinyInstance:
    name: str
    plant: PlantSpec
    noise: NoiseModel
    grids: OperationalGrids
    n_ppa: int = 4

    def __post_init__(self):
        if self.noise.horizon != self.plant.horizon:
            raise OracleError("plant and noise disagree on the horizon")
        if self.leaf_count() > MAX_LEAVES:
            raise OracleError(f"scenario tree has {self.leaf_count()} leaves, budget {MAX_LEAVES}")

    def leaf_count(self) -> int:
        n = 1
        for h in range(self.noise.horizon):
            st = support(self.noise, h)
            n *= int(np.count_nonzero(st.demand.probs)) * int(np.count_nonzero(st.pv.probs))
        return n


def tiny_plant(c_grid, ppa_cap: float = 40.0, c_subsidy: float = 20.0, beta2: Optional[float] = None,
               c_backup: float = 50.0, s0: float = 5.0, p: float = 0.2, m0: Mode = Mode.COLD) -> PlantSpec:
    """A small plant whose reachable stocks are multiples of 0.5 kg.

    ``beta2`` defaults to 0.15, capped just below its admissible bound on long horizons.
    """
    mu = np.array([[1.0, 0.75, 0.5], [1.0, 1.0, 0.75], [1.0, 1.0, 1.0]])
    el = ElectrolyserSpec(np.array([0.5, 1.0]), np.array([10.0, 10.0]), m_max=4.0, e_idle=1.0, l_min=0.5, mu=mu)
    if beta2 is None:
        q_max = len(c_grid) * (1 - p) * (10.0 + 2.0) * el.m_max
        beta2 = min(0.15, 0.99 * c_subsidy / q_max)
    return PlantSpec(el, np.asarray(c_grid, dtype=float), e_comp=2.0, s_min=0.0, s_max=10.0, ppa_cap=ppa_cap,
                     c_ppa=0.075, c_backup=c_backup, c_subsidy=c_subsidy, p=p, beta1=0.0, beta2=beta2,
                     s0=s0, m0=m0)


def tiny_noise(demand, pv, demand_factors=(1.0,), pv_factors=(1.0,)) -> NoiseModel:
    def dist(mu, factors):
        f = np.asarray(factors, dtype=float)
        return DiscreteDistribution(mu * f, np.full(len(f), 1.0 / len(f)))

    return NoiseModel(tuple(StageDistribution(dist(d, demand_factors), dist(v, pv_factors))
                            for d, v in zip(demand, pv)))


def tiny_instance(kind: str = "two", horizon: int = 3, n_ppa: int = 4) -> TinyInstance:
    """Bundled tiny instances: ``deterministic``, ``two`` (demand) or ``three`` (PV) outcomes."""
    c_grid = np.array([0.2, 0.1, 0.3, 0.15])[:horizon]
    pv = np.array([20.0, 30.0, 10.0, 20.0])[:horizon]
    demand = np.full(horizon, 5.0)
    if kind == "deterministic":
        noise = tiny_noise(demand, pv)
        n_out = 3
    elif kind == "two":
        noise = tiny_noise(demand, pv, demand_factors=(0.8, 1.2))
        n_out = 4
    elif kind == "three":
        noise = tiny_noise(demand, pv, pv_factors=(0.5, 1.0, 1.5))
        n_out = 3
    else:
        raise ValueError(f"unknown tiny instance kind {kind!r}")
    plant = tiny_plant(c_grid)
    grids = build_grids(plant, noise, n_stock=21, n_load=2, n_out=n_out)
    return TinyInstance(kind, plant, noise, grids, n_ppa)


def draw_grid(P: float, e_max: float, n_ppa: int) -> np.ndarray:
    """PPA draws considered by every solver: n_ppa points on [0, min(P, e_max)]."""
    top = min(P, e_max)
    if top <= 0.0 or n_ppa == 1:
        return np.zeros(1)
    step = top / (n_ppa - 1)
    return np.array([top if i == n_ppa - 1 else i * step for i in range(n_ppa)])


def _key(*xs):
    return tuple(round(float(x), 9) for x in xs)


def _final(q, plant: PlantSpec, surrogate: bool):
    if surrogate:
        return surrogate_final_cost(q, plant.beta1, plant.beta2, plant.c_subsidy)
    return subsidy_cost(q, plant.c_subsidy)


def _support_lists(noise: NoiseModel, h: int):
    st = support(noise, h)
    d = [(float(v), float(p)) for v, p in zip(st.demand.values, st.demand.probs) if p > 0]
    w = [(float(v), float(p)) for v, p in zip(st.pv.values, st.pv.probs) if p > 0]
    return d, w


class _Tables:
    def __init__(self, inst: TinyInstance):
        self.modes, self.loads, self.prod, self.energy = control_consumption_table(inst.plant, inst.grids.loads)
        self.consumptions = np.unique(np.round(self.energy.ravel(), 12))


def exact_operational(inst: TinyInstance, lam) -> float:
    """Optimal expected backup cost plus priced consumption, by tree enumeration."""
    lam = np.asarray(lam, dtype=float)
    plant, T = inst.plant, inst.noise.horizon
    tab = _Tables(inst)
    memo: Dict[tuple, float] = {}

    def value(h, s, m):
        if h == T:
            return 0.0
        k = (h,) + _key(s) + (m,)
        if k in memo:
            return memo[k]
        dem, _ = _support_lists(inst.noise, h)
        best = np.inf
        for c in range(len(tab.modes)):
            for out in inst.grids.h_out[h]:
                tot = lam[h] * tab.energy[m, c]
                for d, pd in dem:
                    x = s + tab.prod[m, c] - min(d, out)
                    if x < plant.s_min - 1e-9 or x > plant.s_max + 1e-9:
                        tot = np.inf
                        break
                    tot += pd * (plant.c_backup * max(d - out, 0.0) + value(h + 1, x, int(tab.modes[c])))
                best = min(best, tot)
        memo[k] = best
        return best

    return value(0, plant.s0, int(plant.m0))


def exact_electricity(inst: TinyInstance, lam, surrogate: bool = False) -> float:
    """Electricity part of the dual by enumeration.

    PPA draws come from the common draw grid; grid purchases are restricted to
    the values a consumption from the control table can force, which contains
    every allocation the primal problem can produce.
    """
    lam = np.asarray(lam, dtype=float)
    plant, T = inst.plant, inst.noise.horizon
    cons = _Tables(inst).consumptions
    memo: Dict[tuple, float] = {}

    def value(h, P, Q):
        if h == T:
            return float(_final(Q, plant, surrogate))
        k = (h,) + _key(P, Q)
        if k in memo:
            return memo[k]
        _, pvs = _support_lists(inst.noise, h)
        cg = plant.c_grid[h]
        best = np.inf
        for e in draw_grid(P, plant.e_max, inst.n_ppa):
            tot = (plant.c_ppa - lam[h]) * e
            for pv, pw in pvs:
                g = cons - e - pv
                gp = np.maximum(g, 0.0)
                qn = Q + (1 - plant.p) * gp - plant.p * min(plant.e_max, e + pv)
                stage = cg * gp - lam[h] * (g + pv)
                if h == T - 1:
                    tail = _final(qn, plant, surrogate)
                    tot += pw * float(np.min(stage + tail))
                else:
                    tot += pw * min(stage[j] + value(h + 1, P - e, qn[j]) for j in range(len(g)))
            best = min(best, tot)
        memo[k] = best
        return best

    return value(0, plant.ppa_cap, 0.0)


def exact_dual_eval(inst: TinyInstance, lam, surrogate: bool = False) -> float:
    """Dual function value: operational part plus electricity part."""
    return exact_operational(inst, lam) + exact_electricity(inst, lam, surrogate)


def exact_relaxed_joint(inst: TinyInstance, lam, surrogate: bool = False) -> float:
    """The relaxed problem solved jointly over the product state; equals the split value."""
    lam = np.asarray(lam, dtype=float)
    plant, T = inst.plant, inst.noise.horizon
    tab = _Tables(inst)
    memo: Dict[tuple, float] = {}

    def value(h, s, m, P, Q):
        if h == T:
            return float(_final(Q, plant, surrogate))
        k = (h,) + _key(s, P, Q) + (m,)
        if k in memo:
            return memo[k]
        dem, pvs = _support_lists(inst.noise, h)
        best = np.inf
        for c in range(len(tab.modes)):
            for out in inst.grids.h_out[h]:
                ok = all(plant.s_min - 1e-9 <= s + tab.prod[m, c] - min(d, out) <= plant.s_max + 1e-9
                         for d, _ in dem)
                if not ok:
                    continue
                for e in draw_grid(P, plant.e_max, inst.n_ppa):
                    tot = lam[h] * tab.energy[m, c] + (plant.c_ppa - lam[h]) * e
                    for d, pd in dem:
                        x = s + tab.prod[m, c] - min(d, out)
                        for pv, pw in pvs:
                            inner = np.inf
                            for cons in tab.consumptions:
                                g = cons - e - pv
                                gp = max(g, 0.0)
                                qn = Q + (1 - plant.p) * gp - plant.p * min(plant.e_max, e + pv)
                                v = plant.c_grid[h] * gp - lam[h] * (g + pv) + value(h + 1, x, int(tab.modes[c]),
                                                                                    P - e, qn)
                                inner = min(inner, v)
                            tot += pd * pw * (plant.c_backup * max(d - out, 0.0) + inner)
                    best = min(best, tot)
        memo[k] = best
        return best

    return value(0, plant.s0, int(plant.m0), plant.ppa_cap, 0.0)


def exact_primal(inst: TinyInstance, surrogate: bool = False) -> float:
    """Optimal expected cost over discretized nonanticipative policies."""
    plant, T = inst.plant, inst.noise.horizon
    tab = _Tables(inst)
    memo: Dict[tuple, float] = {}

    def value(h, s, m, P, Q):
        if h == T:
            return float(_final(Q, plant, surrogate))
        k = (h,) + _key(s, P, Q) + (m,)
        if k in memo:
            return memo[k]
        dem, pvs = _support_lists(inst.noise, h)
        cg = plant.c_grid[h]
        best = np.inf
        for c in range(len(tab.modes)):
            mc = int(tab.modes[c])
            cons = tab.energy[m, c]
            for out in inst.grids.h_out[h]:
                nxt = [s + tab.prod[m, c] - min(d, out) for d, _ in dem]
                if any(x < plant.s_min - 1e-9 or x > plant.s_max + 1e-9 for x in nxt):
                    continue
                for e in draw_grid(P, plant.e_max, inst.n_ppa):
                    tot = plant.c_ppa * e
                    for (d, pd), x in zip(dem, nxt):
                        for pv, pw in pvs:
                            g = cons - e - pv
                            gp = max(g, 0.0)
                            qn = Q + (1 - plant.p) * gp - plant.p * min(plant.e_max, e + pv)
                            tot += pd * pw * (cg * gp + plant.c_backup * max(d - out, 0.0)
                                              + value(h + 1, x, mc, P - e, qn))
                    best = min(best, tot)
        memo[k] = best
        return best

    return value(0, plant.s0, int(plant.m0), plant.ppa_cap, 0.0)


def enumerate_paths(noise: NoiseModel):
    """All positive-probability outcome index paths with their probabilities."""
    per_stage = []
    for h in range(noise.horizon):
        st = support(noise, h)
        per_stage.append([(i, j, pi * pj) for i, pi in enumerate(st.demand.probs) if pi > 0
                          for j, pj in enumerate(st.pv.probs) if pj > 0])
    d_idx, pv_idx, probs = [], [], []
    for combo in itertools.product(*per_stage):
        d_idx.append([c[0] for c in combo])
        pv_idx.append([c[1] for c in combo])
        probs.append(float(np.prod([c[2] for c in combo])))
    return np.array(d_idx, dtype=np.int64), np.array(pv_idx, dtype=np.int64), np.array(probs)


def exact_policy_value(ctx: PolicyContext, surrogate: bool = False) -> float:
    """Expected policy cost over the whole tree, stepping with the scalar decision rule."""
    plant, noise = ctx.plant, ctx.noise
    T = noise.horizon

    def rec(h, state, acc):
        if h == T:
            return acc + float(_final(state.q, plant, surrogate))
        dec = one_step_decision(ctx, state, h)
        st = support(noise, h)
        tot = 0.0
        for d, pd in zip(st.demand.values, st.demand.probs):
            if pd == 0:
                continue
            for pv, pw in zip(st.pv.values, st.pv.probs):
                if pw == 0:
                    continue
                nxt, e_grid = step_state(state, dec, d, pv, plant)
                cost = (plant.c_ppa * dec.e_ppa + plant.c_grid[h] * max(e_grid, 0.0)
                        + plant.c_backup * max(d - dec.h_out, 0.0))
                tot += pd * pw * rec(h + 1, nxt, acc + cost)
        return tot

    return rec(0, State(plant.s0, plant.m0, plant.ppa_cap, 0.0), 0.0)


def enumerated_policy_value(ctx: PolicyContext):
    """Probability-weighted policy cost under (K, K_hat) from the compiled simulator."""
    d_idx, pv_idx, probs = enumerate_paths(ctx.noise)
    ev = simulate_on_indices(ctx, d_idx, pv_idx)
    return float(probs @ ev.costs_k), float(probs @ ev.costs_khat)


def extensive_form_lp(lam, plant: PlantSpec, noise: NoiseModel, P0: Optional[float] = None,
                      Q0: float = 0.0) -> LinearProgram:
    """Linearized electricity problem on the PV scenario tree.

    Node variables: e_ppa (before the hour's PV), then per child e_grid, e_n, e_r;
    one epigraph variable per leaf for the surrogate final cost.
    """
    lam = np.asarray(lam, dtype=float)
    T = noise.horizon
    P0 = plant.ppa_cap if P0 is None else P0
    eg_min = grid_floor(plant, noise)
    cols: List[tuple] = []  # (cost, lb, ub, name)
    rows: List[tuple] = []  # ({col: coef}, sense, rhs, name)
    offset = 0.0

    def col(cost, lb, ub, name):
        cols.append((cost, lb, ub, name))
        return len(cols) - 1

    # frontier: (prob, path tuple, ppa-used terms, q terms) with linear expressions as dicts
    frontier = [(1.0, (), {}, {})]
    for h in range(T):
        st = support(noise, h)
        pvs = [(float(v), float(p)) for v, p in zip(st.pv.values, st.pv.probs) if p > 0]
        nxt = []
        for prob, path, used, qexpr in frontier:
            tag = "_".join(map(str, path)) or "root"
            e = col(prob * (plant.c_ppa - lam[h]), 0.0, np.inf, f"eppa_{h}_{tag}")
            used2 = dict(used)
            used2[e] = 1.0
            rows.append((used2, LE, P0, f"ppa_{h}_{tag}"))
            for w, (pv, pw) in enumerate(pvs):
                pr = prob * pw
                g = col(-pr * lam[h], eg_min, np.inf, f"egrid_{h}_{tag}_{w}")
                en = col(pr * plant.c_grid[h], 0.0, np.inf, f"en_{h}_{tag}_{w}")
                er = col(0.0, 0.0, plant.e_max, f"er_{h}_{tag}_{w}")
                offset -= pr * lam[h] * pv
                rows.append(({e: 1.0, g: 1.0}, LE, plant.e_max - pv, f"mix_{h}_{tag}_{w}"))
                rows.append(({g: 1.0, en: -1.0}, LE, 0.0, f"pos_{h}_{tag}_{w}"))
                rows.append(({er: 1.0, e: -1.0}, LE, pv, f"ren_{h}_{tag}_{w}"))
                q2 = dict(qexpr)
                q2[en] = q2.get(en, 0.0) + (1 - plant.p)
                q2[er] = q2.get(er, 0.0) - plant.p
                nxt.append((pr, path + (w,), used2, q2))
        frontier = nxt
    for prob, path, _, qexpr in frontier:
        tag = "_".join(map(str, path))
        th = col(prob, -np.inf, np.inf, f"theta_{tag}")
        for j, beta in enumerate((plant.beta1, plant.beta2)):
            r = {th: 1.0}
            for k, v in qexpr.items():
                r[k] = -beta * v
            rows.append((r, GE, beta * Q0 - plant.c_subsidy, f"final{j}_{tag}"))
    n, m = len(cols), len(rows)
    A = np.zeros((m, n))
    for i, (coef, _, _, _) in enumerate(rows):
        for k, v in coef.items():
            A[i, k] = v
    return LinearProgram(np.array([c[0] for c in cols]), A, np.array([r[2] for r in rows]),
                         np.array([r[1] for r in rows]), np.array([c[1] for c in cols]),
                         np.array([c[2] for c in cols]), [c[3] for c in cols], [r[3] for r in rows], offset)


def extensive_form_value(lam, plant: PlantSpec, noise: NoiseModel) -> float:
    sol = solve_lp(extensive_form_lp(lam, plant, noise))
    if sol.status != OPTIMAL:
        raise OracleError(f"extensive form LP status {sol.status}")
    return sol.objective


@dataclass
class ChainReport:
    dual_surrogate: float  # operational table value + SDDP bound
    dual_exact: float  # enumerated dual function with the subsidy cost
    primal: float  # enumerated optimum
    policy: float  # exact expected cost of the lookahead policy
    tolerance: float = 1e-6

    @property
    def holds(self) -> bool:
        t = self.tolerance
        return (self.dual_surrogate <= self.dual_exact + t and self.dual_exact <= self.primal + t
                and self.primal <= self.policy + t)


def verify_chain(inst: TinyInstance, lam, primal: Optional[float] = None, sddp_iters: int = 50,
                 tolerance: float = 1e-6, raise_on_violation: bool = True) -> ChainReport:
    """Check dual_surrogate <= dual_exact <= primal <= policy at one multiplier."""
    lam = np.asarray(lam, dtype=float)
    vf = solve_operational(lam, inst.plant, inst.noise, inst.grids)
    res = sddp_solve(lam, inst.plant, inst.noise, iters=sddp_iters, seed=0)
    ctx = PolicyContext(vf, res.cuts, lam, inst.plant, inst.noise, n_ppa=inst.n_ppa, search="scan")
    report = ChainReport(initial_value(vf, inst.plant) + res.lower_bound, exact_dual_eval(inst, lam),
                         exact_primal(inst) if primal is None else primal, exact_policy_value(ctx),
                         tolerance)
    if raise_on_violation and not report.holds:
        raise ChainViolation(report)
    return report


def saddle_toy_lp(alpha, beta, a, b, demand, y_cap, penalty: float = 1e3) -> LinearProgram:
    """Convex toy: buy x (cost alpha, adds a to Q) and y (cost beta, removes b) to cover demand,
    with final cost penalty * max(Q, 0). Rows 0..T-1 are the covering constraints."""
    alpha, beta, a, b, demand, y_cap = map(lambda v: np.asarray(v, dtype=float), (alpha, beta, a, b, demand, y_cap))
    T = len(demand)
    n = 2 * T + 1
    c = np.concatenate([alpha, beta, [1.0]])
    A = np.zeros((T + 2, n))
    bvec = np.zeros(T + 2)
    sense = np.zeros(T + 2, dtype=np.int64)
    for h in range(T):
        A[h, h] = 1.0
        A[h, T + h] = 1.0
        bvec[h] = demand[h]
        sense[h] = GE
    A[T, -1] = 1.0
    sense[T] = GE
    A[T + 1, -1] = 1.0
    A[T + 1, :T] = -penalty * a
    A[T + 1, T:2 * T] = penalty * b
    sense[T + 1] = GE
    ub = np.concatenate([np.full(T, np.inf), y_cap, [np.inf]])
    return LinearProgram(c, A, bvec, sense, np.zeros(n), ub)


def saddle_price_bound(alpha, beta, a, b):
    return alpha * b / (a + b) + beta * a / (a + b)
