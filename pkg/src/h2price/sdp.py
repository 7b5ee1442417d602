"""Tabular stochastic dynamic programming for the operational subproblem.

State (stock, mode) lives on a uniform stock grid times the three modes. Off-grid
next stocks are valued by linear interpolation between neighbouring grid points.
Controls are enumerated as COLD, IDLE, START x loads, each crossed with the hourly
extraction grid, so ``argmin`` picking the first minimum gives the lexicographic
tie-break (mode, load, extraction).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from numba import njit, prange

from .model import Mode, PlantSpec, TOL, control_consumption_table
from .scenario import NoiseModel, support


class OperationalError(RuntimeError):
    pass


@dataclass(frozen=True)
class OperationalGrids:
    stock: np.ndarray
    loads: np.ndarray
    h_out: tuple  # one array per hour

    def __post_init__(self):
        s = np.asarray(self.stock, dtype=float)
        object.__setattr__(self, "stock", s)
        object.__setattr__(self, "loads", np.asarray(self.loads, dtype=float))
        object.__setattr__(self, "h_out", tuple(np.asarray(o, dtype=float) for o in self.h_out))
        if len(s) < 2 or np.any(np.diff(s) <= 0):
            raise ValueError("stock grid needs at least two increasing points")
        if not np.allclose(np.diff(s), s[1] - s[0], rtol=1e-9, atol=1e-12):
            raise ValueError("stock grid must be uniform")
        for o in self.h_out:
            if len(o) < 1 or np.any(o < 0) or np.any(np.diff(o) <= 0):
                raise ValueError("extraction grids must be nonnegative and increasing")

    @property
    def step(self) -> float:
        return float(self.stock[1] - self.stock[0])


def build_grids(plant: PlantSpec, noise: NoiseModel, n_stock: int = 300, n_load: int = 30,
                n_out: int = 7) -> OperationalGrids:
    """Uniform grids; extraction spans 0 up to the largest demand outcome of each hour."""
    stock = np.linspace(plant.s_min, plant.s_max, n_stock)
    loads = np.linspace(plant.electrolyser.l_min, 1.0, n_load)
    outs = []
    for h in range(noise.horizon):
        top = float(support(noise, h).demand.values.max())
        outs.append(np.linspace(0.0, top, n_out) if top > 0 else np.zeros(1))
    return OperationalGrids(stock, loads, tuple(outs))


@dataclass
class ValueFunctionO:
    """Value table ``values[h, i, m]`` for h = 0..T and argmin control indices."""

    values: np.ndarray
    policy: np.ndarray
    lam: np.ndarray
    grids: OperationalGrids
    modes: np.ndarray
    load_values: np.ndarray

    @property
    def horizon(self) -> int:
        return self.policy.shape[0]

    def n_out(self, h: int) -> int:
        return len(self.grids.h_out[h])

    def decode(self, h: int, idx: int):
        """Control index -> (mode_cmd, load, h_out)."""
        no = self.n_out(h)
        c, o = divmod(int(idx), no)
        return Mode(int(self.modes[c])), float(self.load_values[c]), float(self.grids.h_out[h][o])

    def value(self, h: int, s, m):
        return interpolate(self.values[h], self.grids, s, m)


def interp_weights(grids: OperationalGrids, s):
    """Lower index and upper weight of ``s`` on the stock grid (clipped into range)."""
    s = np.asarray(s, dtype=float)
    pos = (s - grids.stock[0]) / grids.step
    n = len(grids.stock)
    pos = np.clip(pos, 0.0, n - 1.0)
    i = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    w = pos - i
    # snap tiny roundoff onto grid points
    w = np.where(np.abs(w) < 1e-12, 0.0, np.where(np.abs(w - 1.0) < 1e-12, 1.0, w))
    return i, w


def interpolate(table: np.ndarray, grids: OperationalGrids, s, m):
    """Linear interpolation of ``table[:, m]`` at stock ``s``; +inf propagates."""
    i, w = interp_weights(grids, s)
    m = np.asarray(m, dtype=np.int64)
    lo = table[i, m]
    hi = table[i + 1, m]
    with np.errstate(invalid="ignore"):
        mid = (1.0 - w) * lo + w * hi
    out = np.where(w == 0.0, lo, np.where(w == 1.0, hi, mid))
    return float(out) if out.ndim == 0 else out


@njit(cache=True, inline="always")
def _interp_one(v, s0, step, n, x, m):
    pos = (x - s0) / step
    if pos < 0.0:
        pos = 0.0
    elif pos > n - 1.0:
        pos = n - 1.0
    i = min(int(np.floor(pos)), n - 2)
    w = pos - i
    if abs(w) < 1e-12:
        return v[i, m]
    if abs(w - 1.0) < 1e-12:
        return v[i + 1, m]
    return (1.0 - w) * v[i, m] + w * v[i + 1, m]


@njit(cache=True, parallel=True)
def _stage_kernel(stock, prod_m, energy_m, modes, outs, d, pd, v_next, lam_h, c_backup,
                  s_min, s_max, tol):
    n_s = stock.shape[0]
    n_c = prod_m.shape[0]
    n_o = outs.shape[0]
    n_k = d.shape[0]
    step = stock[1] - stock[0]
    backup = np.zeros(n_o)
    for o in range(n_o):
        for k in range(n_k):
            backup[o] += pd[k] * max(d[k] - outs[o], 0.0)
        backup[o] *= c_backup
    best_v = np.empty(n_s)
    best_i = np.empty(n_s, dtype=np.int64)
    for i in prange(n_s):
        bv = np.inf
        bi = 0
        for c in range(n_c):
            base = stock[i] + prod_m[c]
            mc = modes[c]
            for o in range(n_o):
                total = 0.0
                ok = True
                for k in range(n_k):
                    x = base - min(d[k], outs[o])
                    if x < s_min - tol or x > s_max + tol:
                        ok = False
                        break
                    total += pd[k] * _interp_one(v_next, stock[0], step, n_s, x, mc)
                if not ok:
                    continue
                q = total + backup[o] + lam_h * energy_m[c]
                if q < bv:
                    bv = q
                    bi = c * n_o + o
        best_v[i] = bv
        best_i[i] = bi
    return best_v, best_i


def stage_operational_values(h: int, lam_h: float, v_next: np.ndarray, plant: PlantSpec,
                             noise: NoiseModel, grids: OperationalGrids, m_prev: int):
    """Q-values (N_s, C * N_o) of hour h for previous mode ``m_prev``; +inf when pruned.

    Reference implementation; ``solve_operational`` uses the compiled kernel.
    """
    modes, _, prod, energy = control_consumption_table(plant, grids.loads)
    st = support(noise, h)
    keep = st.demand.probs > 0
    d, pd = st.demand.values[keep], st.demand.probs[keep]
    outs = grids.h_out[h]
    s = grids.stock
    served = np.minimum(d[None, :], outs[:, None])  # (O, K)
    backup = plant.c_backup * (np.maximum(d[None, :] - outs[:, None], 0.0) @ pd)  # (O,)
    nxt = s[:, None, None, None] + prod[m_prev][None, :, None, None] - served[None, None, :, :]
    feasible = np.all((nxt >= plant.s_min - TOL) & (nxt <= plant.s_max + TOL), axis=3)
    i, w = interp_weights(grids, nxt)
    mode_idx = np.broadcast_to(modes[None, :, None, None], nxt.shape)
    with np.errstate(invalid="ignore"):
        lo = v_next[i, mode_idx]
        hi = v_next[i + 1, mode_idx]
        cont = np.where(w == 0.0, lo, np.where(w == 1.0, hi, (1.0 - w) * lo + w * hi))
        exp_cont = cont @ pd  # (N_s, C, O)
    q = exp_cont + backup[None, None, :] + lam_h * energy[m_prev][None, :, None]
    q = np.where(feasible, q, np.inf)
    return q.reshape(len(s), -1)


def solve_operational(lam, plant: PlantSpec, noise: NoiseModel, grids: OperationalGrids) -> ValueFunctionO:
    """Backward induction; ``values[T] = 0``."""
    lam = np.asarray(lam, dtype=float)
    T = noise.horizon
    if lam.shape != (T,):
        raise ValueError(f"multiplier must have length {T}")
    if plant.horizon != T or len(grids.h_out) != T:
        raise ValueError("plant, noise and grids disagree on the horizon")
    n_s = len(grids.stock)
    values = np.zeros((T + 1, n_s, 3))
    policy = np.zeros((T, n_s, 3), dtype=np.int64)
    modes, load_values, prod, energy = control_consumption_table(plant, grids.loads)
    modes = modes.astype(np.int64)
    for h in range(T - 1, -1, -1):
        st = support(noise, h)
        keep = st.demand.probs > 0
        d, pd = st.demand.values[keep], st.demand.probs[keep]
        for m in range(3):
            v, k = _stage_kernel(grids.stock, prod[m], energy[m], modes, grids.h_out[h], d, pd,
                                 values[h + 1], float(lam[h]), plant.c_backup,
                                 plant.s_min, plant.s_max, TOL)
            policy[h, :, m] = k
            values[h, :, m] = v
    return ValueFunctionO(values, policy, lam.copy(), grids, modes, load_values)


def initial_value(vf: ValueFunctionO, plant: PlantSpec) -> float:
    return float(vf.value(0, plant.s0, int(plant.m0)))


def operational_policy(vf: ValueFunctionO, s: float, m: int, h: int):
    """Stored argmin at the nearest stock grid point."""
    i = int(np.clip(np.rint((s - vf.grids.stock[0]) / vf.grids.step), 0, len(vf.grids.stock) - 1))
    if not np.isfinite(vf.values[h, i, int(m)]):
        raise OperationalError(f"no feasible control at hour {h}, stock {s}, mode {Mode(int(m)).name}")
    return vf.decode(h, vf.policy[h, i, int(m)])


@dataclass
class ForwardLaw:
    """State distributions and per-hour expectations under the tabulated policy."""

    dist: np.ndarray  # (T+1, N_s, 3)
    consumption: np.ndarray  # E[E^e + E^c] per hour
    production: np.ndarray
    served: np.ndarray
    expected_cost: np.ndarray  # E[backup + lam * consumption] per hour


def forward_law(vf: ValueFunctionO, plant: PlantSpec, noise: NoiseModel) -> ForwardLaw:
    """Exact forward propagation of the state law (mass split by interpolation weights)."""
    grids = vf.grids
    T = vf.horizon
    n_s = len(grids.stock)
    modes, _, prod, energy = control_consumption_table(plant, grids.loads)
    dist = np.zeros((T + 1, n_s, 3))
    i0, w0 = interp_weights(grids, plant.s0)
    dist[0, i0, int(plant.m0)] += 1.0 - w0
    dist[0, i0 + 1, int(plant.m0)] += w0
    cons = np.zeros(T)
    prodn = np.zeros(T)
    served_exp = np.zeros(T)
    cost = np.zeros(T)
    for h in range(T):
        st = support(noise, h)
        outs = grids.h_out[h]
        no = len(outs)
        for m in range(3):
            mass = dist[h, :, m]
            idx = np.nonzero(mass > 0)[0]
            if idx.size == 0:
                continue
            k = vf.policy[h, idx, m]
            if not np.all(np.isfinite(vf.values[h, idx, m])):
                raise OperationalError(f"positive mass on an infeasible state at hour {h}")
            c, o = np.divmod(k, no)
            mw = mass[idx]
            cons[h] += mw @ energy[m, c]
            prodn[h] += mw @ prod[m, c]
            for d, pd in zip(st.demand.values, st.demand.probs):
                if pd == 0:
                    continue
                sv = np.minimum(d, outs[o])
                served_exp[h] += pd * (mw @ sv)
                cost[h] += pd * (mw @ (plant.c_backup * np.maximum(d - outs[o], 0.0)))
                ni, nw = interp_weights(grids, grids.stock[idx] + prod[m, c] - sv)
                np.add.at(dist[h + 1], (ni, modes[c]), pd * mw * (1.0 - nw))
                np.add.at(dist[h + 1], (ni + 1, modes[c]), pd * mw * nw)
        cost[h] += vf.lam[h] * cons[h]
    return ForwardLaw(dist, cons, prodn, served_exp, cost)


def expected_consumption_profile(vf: ValueFunctionO, plant: PlantSpec, noise: NoiseModel) -> np.ndarray:
    return forward_law(vf, plant, noise).consumption


def write_value_table(vf: ValueFunctionO, path, hours: Optional[List[int]] = None) -> None:
    """CSV with columns hour, stock_kg, mode, value_eur, mode_cmd, load, h_out_kg."""
    hours = range(vf.horizon) if hours is None else hours
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "stock_kg", "mode", "value_eur", "mode_cmd", "load", "h_out_kg"])
        for h in hours:
            for i, s in enumerate(vf.grids.stock):
                for m in range(3):
                    mc, ld, ho = vf.decode(h, vf.policy[h, i, m])
                    w.writerow([h, f"{s:.10g}", Mode(m).name, f"{vf.values[h, i, m]:.10g}",
                                mc.name, f"{ld:.10g}", f"{ho:.10g}"])
