"""Admissible one-step lookahead policy and its Monte Carlo evaluation.

At each hour the policy picks (e_ppa, mode, load, extraction) minimizing the
expected instantaneous cost plus the operational value of the next (stock, mode)
and the electricity cut approximation at the next (P, Q). Grid purchase is not a
free decision: it closes the hourly balance once demand and PV are observed.

The objective separates into a demand part that depends on the operational
control and a PV part that depends on the control only through its consumption.
The PV part is convex in the PPA draw, so its minimum over the draw grid is found
by a local descent warm-started at the previous control's minimizer, or by
bisection. ``search="scan"`` checks every grid point instead.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from numba import njit, prange

from .model import Control, Mode, PlantSpec, State, control_consumption_table
from .scenario import NoiseModel, sample_indices, support
from .sddp import CutSet, grid_floor
from .sdp import ValueFunctionO, _interp_one


class PolicyError(RuntimeError):
    pass


@dataclass
class PolicyContext:
    vf: ValueFunctionO
    cuts: CutSet
    lam: np.ndarray
    plant: PlantSpec
    noise: NoiseModel
    n_ppa: int = 30
    search: str = "descent"
    prune: bool = True

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if not np.array_equal(self.lam, self.vf.lam):
            raise PolicyError("operational values were computed for a different multiplier")
        if self.search not in _SEARCH:
            raise ValueError(f"search must be one of {sorted(_SEARCH)}")
        if self.n_ppa < 1:
            raise ValueError("n_ppa must be positive")
        self._arrays = None

    @property
    def grids(self):
        return self.vf.grids

    def arrays(self):
        """Stacked per-hour arrays for the compiled kernels."""
        if self._arrays is None:
            self._arrays = _pack(self)
        return self._arrays


@dataclass
class _Packed:
    prod: np.ndarray
    energy: np.ndarray
    modes: np.ndarray
    outs: np.ndarray
    n_out: np.ndarray
    d: np.ndarray
    pd: np.ndarray
    pv: np.ndarray
    ppv: np.ndarray
    ca: np.ndarray
    cb: np.ndarray
    cc: np.ndarray
    ncut: np.ndarray
    floor: np.ndarray
    c_grid: np.ndarray


def _pack(ctx: PolicyContext) -> _Packed:
    T = ctx.noise.horizon
    modes, _, prod, energy = control_consumption_table(ctx.plant, ctx.grids.loads)
    n_o = max(len(o) for o in ctx.grids.h_out)
    outs = np.zeros((T, n_o))
    n_out = np.zeros(T, dtype=np.int64)
    K = max(len(support(ctx.noise, h).demand.values) for h in range(T))
    W = max(len(support(ctx.noise, h).pv.values) for h in range(T))
    d = np.zeros((T, K))
    pd = np.zeros((T, K))
    pv = np.zeros((T, W))
    ppv = np.zeros((T, W))
    for h in range(T):
        o = ctx.grids.h_out[h]
        outs[h, :len(o)] = o
        n_out[h] = len(o)
        st = support(ctx.noise, h)
        d[h, :len(st.demand.values)] = st.demand.values
        pd[h, :len(st.demand.probs)] = st.demand.probs
        pv[h, :len(st.pv.values)] = st.pv.values
        ppv[h, :len(st.pv.probs)] = st.pv.probs
    cuts = ctx.cuts
    if ctx.prune:
        cuts = cuts.pruned((0.0, ctx.plant.ppa_cap), (ctx.plant.q_min, ctx.plant.q_max))
    return _Packed(prod, energy, modes.astype(np.int64), outs, n_out, d, pd, pv, ppv,
                   cuts.intercept.copy(), cuts.slope_p.copy(), cuts.slope_q.copy(),
                   cuts.count.copy(), cuts.floor.copy(), ctx.plant.c_grid.copy())


@njit(cache=True, inline="always")
def _ve(ca, cb, cc, ncut, floor, use_floor, P, Q):
    v = -np.inf
    for k in range(ncut):
        t = ca[k] + cb[k] * P + cc[k] * Q
        if t > v:
            v = t
    if use_floor and floor > v:
        v = floor
    return v


@njit(cache=True)
def _pv_part(cons, e, P, Q, pv, ppv, ca, cb, cc, ncut, floor, use_floor, c_ppa, cg, p, emax):
    tot = 0.0
    for w in range(pv.shape[0]):
        if ppv[w] == 0.0:
            continue
        g = cons - e - pv[w]
        gp = g if g > 0.0 else 0.0
        r = e + pv[w]
        if r > emax:
            r = emax
        qn = Q + (1.0 - p) * gp - p * r
        tot += ppv[w] * (cg * gp + _ve(ca, cb, cc, ncut, floor, use_floor, P - e, qn))
    return tot + c_ppa * e


_DESCENT, _BISECT, _SCAN = 0, 1, 2
_SEARCH = {"descent": _DESCENT, "bisect": _BISECT, "scan": _SCAN}


@njit(cache=True)
def _draw_value(i, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut, floor, use_floor,
                c_ppa, cg, p, emax):
    if np.isnan(memo[i]):
        e = top if i == n_ppa - 1 else i * step
        memo[i] = _pv_part(cons, e, P, Q, pv, ppv, ca, cb, cc, ncut, floor, use_floor, c_ppa, cg, p, emax)
    return memo[i]


@njit(cache=True)
def _best_draw(cons, P, Q, n_ppa, pv, ppv, ca, cb, cc, ncut, floor, use_floor, c_ppa, cg, p, emax,
               search, memo, start):
    """Minimum over the draw grid: (value, grid index, draw)."""
    top = min(P, emax)
    if top <= 0.0 or n_ppa == 1:
        return _pv_part(cons, 0.0, P, Q, pv, ppv, ca, cb, cc, ncut, floor, use_floor,
                        c_ppa, cg, p, emax), 0, 0.0
    step = top / (n_ppa - 1)
    memo[:n_ppa] = np.nan
    if search == _DESCENT:
        # the objective is convex in the draw: walk from the warm start to the leftmost minimizer
        i = min(max(start, 0), n_ppa - 1)
        f = _draw_value(i, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut, floor,
                        use_floor, c_ppa, cg, p, emax)
        moved = False
        while i > 0:
            g = _draw_value(i - 1, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut, floor,
                            use_floor, c_ppa, cg, p, emax)
            if g <= f:
                i -= 1
                f = g
                moved = True
            else:
                break
        if not moved:
            while i < n_ppa - 1:
                g = _draw_value(i + 1, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut,
                                floor, use_floor, c_ppa, cg, p, emax)
                if g < f:
                    i += 1
                    f = g
                else:
                    break
        best = f
        bi = i
    elif search == _SCAN:
        best = np.inf
        bi = 0
        for i in range(n_ppa):
            f = _draw_value(i, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut, floor,
                            use_floor, c_ppa, cg, p, emax)
            if f < best:
                best = f
                bi = i
    else:
        lo = 0
        hi = n_ppa - 1
        while lo < hi:
            mid = (lo + hi) // 2
            f0 = _draw_value(mid, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut, floor,
                             use_floor, c_ppa, cg, p, emax)
            f1 = _draw_value(mid + 1, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut,
                             floor, use_floor, c_ppa, cg, p, emax)
            if f0 <= f1:
                hi = mid
            else:
                lo = mid + 1
        bi = lo
        best = _draw_value(bi, memo, top, step, n_ppa, cons, P, Q, pv, ppv, ca, cb, cc, ncut, floor,
                           use_floor, c_ppa, cg, p, emax)
    return best, bi, (top if bi == n_ppa - 1 else bi * step)


@njit(cache=True)
def _decide(s, m, P, Q, prod_m, energy_m, modes, outs, n_out, d, pd, pv, ppv, vo_next, s0, step,
            s_min, s_max, ca, cb, cc, ncut, floor, use_floor, c_ppa, cg, c_d, p, emax, n_ppa, search,
            a_val, a_out, b_val, memo):
    """Returns (control index, extraction index, draw index, draw, objective).

    Ties go to the lowest control index, then the lowest extraction and draw index.
    """
    C = prod_m.shape[0]
    n_s = vo_next.shape[0]
    tol = 1e-9
    c_low = -1
    for c in range(C):
        a_best = np.inf
        o_best = -1
        for o in range(n_out):
            tot = 0.0
            ok = True
            for k in range(d.shape[0]):
                if pd[k] == 0.0:
                    continue
                x = s + prod_m[c] - min(d[k], outs[o])
                if x < s_min - tol or x > s_max + tol:
                    ok = False
                    break
                tot += pd[k] * (c_d * max(d[k] - outs[o], 0.0)
                                + _interp_one(vo_next, s0, step, n_s, x, modes[c]))
            if ok and tot < a_best:
                a_best = tot
                o_best = o
        a_val[c] = a_best
        a_out[c] = o_best
        if o_best >= 0 and a_best < np.inf and (c_low < 0 or energy_m[c] < energy_m[c_low]):
            c_low = c
    if c_low < 0:
        return -1, -1, 0, 0.0, np.inf
    # the PV part is nondecreasing in consumption, so any value already computed at a
    # lower consumption bounds it from below
    scan = search == _SCAN
    b_low, start, _ = _best_draw(energy_m[c_low], P, Q, n_ppa, pv, ppv, ca, cb, cc, ncut, floor, use_floor,
                                 c_ppa, cg, p, emax, search, memo, 0)
    b_val[:C] = np.nan
    order = np.argsort(a_val[:C], kind="mergesort")
    best_val = np.inf
    best_c = -1
    best_o = -1
    best_i = 0
    best_e = 0.0
    for j in range(C):
        c = order[j]
        if a_out[c] < 0 or a_val[c] == np.inf:
            break
        if not scan:
            if a_val[c] + b_low > best_val:
                break
            lb = b_low
            for k in range(C):
                if not np.isnan(b_val[k]) and energy_m[k] <= energy_m[c] and b_val[k] > lb:
                    lb = b_val[k]
            if a_val[c] + lb > best_val:
                continue
        b, bi, e = _best_draw(energy_m[c], P, Q, n_ppa, pv, ppv, ca, cb, cc, ncut, floor, use_floor,
                              c_ppa, cg, p, emax, search, memo, start)
        b_val[c] = b
        start = bi
        val = a_val[c] + b
        if val < best_val or (val == best_val and c < best_c):
            best_val = val
            best_c = c
            best_o = a_out[c]
            best_i = bi
            best_e = e
    return best_c, best_o, best_i, best_e, best_val


@dataclass
class Decision:
    e_ppa: float
    mode_cmd: Mode
    load: float
    h_out: float
    objective: float
    consumption: float
    production: float

    def realize(self, pv: float) -> Control:
        """Control once PV is observed; grid purchase closes the balance."""
        return Control(self.e_ppa, self.consumption - self.e_ppa - pv, self.load, self.mode_cmd, self.h_out)


def _kernel_args(ctx: PolicyContext, h: int):
    a = ctx.arrays()
    vf = ctx.vf
    T = ctx.noise.horizon
    return (a.outs[h], a.n_out[h], a.d[h], a.pd[h], a.pv[h], a.ppv[h], vf.values[h + 1],
            vf.grids.stock[0], vf.grids.step, ctx.plant.s_min, ctx.plant.s_max,
            a.ca[h + 1], a.cb[h + 1], a.cc[h + 1], a.ncut[h + 1], a.floor[h + 1], h + 1 < T,
            ctx.plant.c_ppa, a.c_grid[h], ctx.plant.c_backup, ctx.plant.p, ctx.plant.e_max)


def one_step_decision(ctx: PolicyContext, state: State, h: int) -> Decision:
    a = ctx.arrays()
    m = int(state.m)
    (outs, n_out, d, pd, pv, ppv, vo, s0, step, smin, smax, ca, cb, cc, ncut, floor, use_floor,
     c_ppa, cg, c_d, p, emax) = _kernel_args(ctx, h)
    c, o, _, e, val = _decide(float(state.s), m, float(state.p_stock), float(state.q), a.prod[m],
                              a.energy[m], a.modes, outs, n_out, d, pd, pv, ppv, vo, s0, step, smin,
                              smax, ca, cb, cc, ncut, floor, use_floor, c_ppa, cg, c_d, p, emax,
                              ctx.n_ppa, _SEARCH[ctx.search], np.empty(a.prod.shape[1]),
                              np.empty(a.prod.shape[1], dtype=np.int64), np.empty(a.prod.shape[1]),
                              np.empty(ctx.n_ppa))
    if c < 0:
        raise PolicyError(f"no admissible control at hour {h} for state {state}")
    return Decision(float(e), Mode(int(a.modes[c])), float(ctx.vf.load_values[c]), float(outs[o]),
                    float(val), float(a.energy[m, c]), float(a.prod[m, c]))


def step_state(state: State, dec: Decision, demand: float, pv: float, plant: PlantSpec):
    """Next state and instantaneous cost under the true dynamics."""
    e_grid = dec.consumption - dec.e_ppa - pv
    s = state.s + dec.production - min(demand, dec.h_out)
    q = state.q + (1 - plant.p) * max(e_grid, 0.0) - plant.p * min(plant.e_max, dec.e_ppa + pv)
    return State(s, dec.mode_cmd, state.p_stock - dec.e_ppa, q), e_grid


@njit(cache=True, parallel=True)
def _simulate(s0v, m0, P0, prod, energy, modes, outs, n_out, d, pd, pv, ppv, di, wi, vo, stock0,
              step, s_min, s_max, ca, cb, cc, ncut, floor, c_ppa, c_grid, c_d, p, emax, eg_min,
              n_ppa, search, rec):
    n_paths, T = di.shape
    cost = np.zeros(n_paths)
    q_final = np.zeros(n_paths)
    p_final = np.zeros(n_paths)
    viol = np.zeros((n_paths, 5), dtype=np.int64)
    failed = np.zeros(n_paths, dtype=np.int64)
    C = prod.shape[1]
    for i in prange(n_paths):
        a_val = np.empty(C)
        a_out = np.empty(C, dtype=np.int64)
        b_val = np.empty(C)
        memo = np.empty(n_ppa)
        s = s0v
        m = m0
        P = P0
        Q = 0.0
        tot = 0.0
        for h in range(T):
            use_floor = h + 1 < T
            c, o, _, e, val = _decide(s, m, P, Q, prod[m], energy[m], modes, outs[h], n_out[h],
                                      d[h], pd[h], pv[h], ppv[h], vo[h + 1], stock0, step, s_min,
                                      s_max, ca[h + 1], cb[h + 1], cc[h + 1], ncut[h + 1],
                                      floor[h + 1], use_floor, c_ppa, c_grid[h], c_d, p, emax,
                                      n_ppa, search, a_val, a_out, b_val, memo)
            if c < 0:
                failed[i] = h + 1
                break
            dem = d[h, di[i, h]]
            e_pv = pv[h, wi[i, h]]
            cons = energy[m, c]
            e_grid = cons - e - e_pv
            ho = outs[h, o]
            served = min(dem, ho)
            s_next = s + prod[m, c] - served
            gp = e_grid if e_grid > 0.0 else 0.0
            r = e + e_pv
            if r > emax:
                r = emax
            stage = c_ppa * e + c_grid[h] * gp + c_d * max(dem - ho, 0.0)
            if rec.shape[0] > i:
                rec[i, h, 0] = s
                rec[i, h, 1] = m
                rec[i, h, 2] = P
                rec[i, h, 3] = Q
                rec[i, h, 4] = e
                rec[i, h, 5] = e_grid
                rec[i, h, 6] = e_pv
                rec[i, h, 7] = modes[c]
                rec[i, h, 8] = c
                rec[i, h, 9] = ho
                rec[i, h, 10] = dem
                rec[i, h, 11] = cons
                rec[i, h, 12] = stage
            # invariant counters: stock bounds, coupling, mix cap, grid floor
            if s_next < s_min - 1e-9 or s_next > s_max + 1e-9:
                viol[i, 0] += 1
            if abs(cons - (e + e_grid + e_pv)) > 1e-9:
                viol[i, 1] += 1
            if e + e_grid + e_pv > emax + 1e-9:
                viol[i, 2] += 1
            if e_grid < eg_min - 1e-9:
                viol[i, 3] += 1
            tot += stage
            s = s_next
            m = modes[c]
            P = P - e
            Q = Q + (1.0 - p) * gp - p * r
        if P < -1e-9:
            viol[i, 4] += 1
        cost[i] = tot
        q_final[i] = Q
        p_final[i] = P
    return cost, q_final, p_final, viol, failed


RECORD_FIELDS = ("stock_kg", "mode", "ppa_stock_kwh", "q_kwh", "e_ppa_kwh", "e_grid_kwh", "e_pv_kwh",
                 "mode_cmd", "control", "h_out_kg", "demand_kg", "consumption_kwh", "stage_cost_eur")


@dataclass
class SimulationRecord:
    """Trajectories of the first ``n`` simulated paths: array (n, T, fields)."""

    data: np.ndarray
    load_values: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "hour", "stock_kg", "mode", "ppa_stock_kwh", "q_kwh", "e_ppa_kwh",
                        "e_grid_kwh", "e_pv_kwh", "mode_cmd", "load", "h_out_kg", "demand_kg",
                        "consumption_kwh", "stage_cost_eur"])
            for i in range(self.data.shape[0]):
                for h in range(self.data.shape[1]):
                    r = self.data[i, h]
                    w.writerow([i, h, f"{r[0]:.10g}", Mode(int(r[1])).name, f"{r[2]:.10g}", f"{r[3]:.10g}",
                                f"{r[4]:.10g}", f"{r[5]:.10g}", f"{r[6]:.10g}", Mode(int(r[7])).name,
                                f"{self.load_values[int(r[8])]:.10g}", f"{r[9]:.10g}", f"{r[10]:.10g}",
                                f"{r[11]:.10g}", f"{r[12]:.10g}"])


@dataclass
class PolicyEvaluation:
    mean_cost_k: float
    mean_cost_khat: float
    ci_k: float
    ci_khat: float
    costs_k: np.ndarray
    costs_khat: np.ndarray
    q_final: np.ndarray
    p_final: np.ndarray
    violations: Dict[str, int]
    record: Optional[SimulationRecord] = None

    @property
    def subsidy_rate(self) -> float:
        return float(np.mean(self.q_final <= 0))

    @property
    def n_paths(self) -> int:
        return len(self.costs_k)


VIOLATION_NAMES = ("stock_bounds", "coupling", "mix_cap", "grid_floor", "ppa_final")


def simulate_on_indices(ctx: PolicyContext, d_idx: np.ndarray, pv_idx: np.ndarray,
                        keep: int = 0) -> PolicyEvaluation:
    a = ctx.arrays()
    plant = ctx.plant
    rec = np.zeros((min(keep, d_idx.shape[0]), d_idx.shape[1], len(RECORD_FIELDS)))
    cost, qf, pf, viol, failed = _simulate(
        float(plant.s0), int(plant.m0), float(plant.ppa_cap), a.prod, a.energy, a.modes, a.outs,
        a.n_out, a.d, a.pd, a.pv, a.ppv, np.ascontiguousarray(d_idx, dtype=np.int64),
        np.ascontiguousarray(pv_idx, dtype=np.int64), ctx.vf.values, ctx.grids.stock[0],
        ctx.grids.step, plant.s_min, plant.s_max, a.ca, a.cb, a.cc, a.ncut, a.floor, plant.c_ppa,
        a.c_grid, plant.c_backup, plant.p, plant.e_max, grid_floor(plant, ctx.noise), ctx.n_ppa,
        _SEARCH[ctx.search], rec)
    if np.any(failed):
        i = int(np.argmax(failed > 0))
        raise PolicyError(f"no admissible control on path {i} at hour {failed[i] - 1}")
    k_cost = cost + np.where(qf <= 0, -plant.c_subsidy, 0.0)
    khat_cost = cost + np.maximum(plant.beta1 * qf, plant.beta2 * qf) - plant.c_subsidy
    n = len(cost)
    z = 1.96
    ci = lambda x: float(z * x.std(ddof=1) / np.sqrt(n)) if n > 1 and np.ptp(x) > 0 else 0.0
    violations = {name: int(viol[:, j].sum()) for j, name in enumerate(VIOLATION_NAMES)}
    record = SimulationRecord(rec, ctx.vf.load_values) if keep else None
    return PolicyEvaluation(float(k_cost.mean()), float(khat_cost.mean()), ci(k_cost), ci(khat_cost),
                            k_cost, khat_cost, qf, pf, violations, record)


def simulate_policy(ctx: PolicyContext, n_paths: int = 5000, seed: int = 0, keep: int = 0) -> PolicyEvaluation:
    """Monte Carlo cost under the subsidy and the surrogate final cost, same trajectories."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    d_idx, pv_idx = sample_indices(ctx.noise, n_paths, seed)
    return simulate_on_indices(ctx, d_idx, pv_idx, keep)


@dataclass
class GapReport:
    dual_value: float
    policy_value: float
    gap_abs: float
    gap_rel: float
    dual_shifted: float
    policy_shifted: float
    gap_rel_shifted: float
    tolerance: float = 0.0

    @property
    def violated(self) -> bool:
        return self.gap_abs < -self.tolerance


def gap_report(dual_value: float, policy_value: float, c_subsidy: float = 0.0, tolerance: float = 0.0) -> GapReport:
    """Absolute and relative gap; the shifted variant adds c_subsidy to both values."""
    if not (np.isfinite(dual_value) and np.isfinite(policy_value)):
        raise ValueError("gap needs finite values")
    gap = policy_value - dual_value
    rel = gap / abs(policy_value) if policy_value != 0 else (0.0 if gap == 0 else np.inf)
    ds, ps = dual_value + c_subsidy, policy_value + c_subsidy
    rel_s = gap / abs(ps) if ps != 0 else (0.0 if gap == 0 else np.inf)
    return GapReport(dual_value, policy_value, gap, rel, ds, ps, rel_s, tolerance)
