"""SDDP for the convexified electricity allocation subproblem.

Each stage problem is the deterministic equivalent over the hour's PV outcomes:
the PPA draw is shared, grid purchase and the two linearization variables are
per outcome. Future cost is represented by epigraph variables bounded below by
cuts on the outgoing (P, Q) state. Cut rows are generated lazily: the LP is
solved with a subset of cuts, the most violated remaining cut per outcome is
added, and the loop repeats until no cut is violated.

Variable layout: 0 e_ppa, 1 x_P, 2 x_Q, then per outcome w (offset 3 + 4w):
e_grid, e_n, e_r, theta. Rows: 0 x_P = P, 1 x_Q = Q, 2 e_ppa <= x_P, per
outcome (offset 3 + 3w): mix cap, e_grid <= e_n, e_r <= e_ppa + pv; cut rows last.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numba import njit

from .lp import LinearProgram, OPTIMAL, STATUS_NAMES, _solve_kernel, FEAS_TOL, OPT_TOL, PIVOT_TOL
from .model import PlantSpec, surrogate_final_cost
from .scenario import NoiseModel, support


class SddpError(RuntimeError):
    pass


_NV0, _NVW, _NR0, _NRW = 3, 4, 3, 3
_MAX_ROUNDS = 50


def grid_floor(plant: PlantSpec, noise: NoiseModel) -> float:
    """Lower bound on grid purchase (largest possible export)."""
    return -(plant.ppa_cap + noise.pv_max)


def theta_floors(lam, plant: PlantSpec, noise: NoiseModel) -> np.ndarray:
    """Valid lower bounds of the electricity value functions, indexed h = 0..T.

    Each remaining hour earns at most max(lam*E_max, lam*E_grid_min) and the
    surrogate final cost is at least beta1 * Q_min - c_s on reachable states.
    """
    lam = np.asarray(lam, dtype=float)
    eg = grid_floor(plant, noise)
    per_hour = -np.maximum(lam * plant.e_max, lam * eg)
    tail = np.concatenate([np.cumsum(per_hour[::-1])[::-1], [0.0]])
    return tail + plant.beta1 * plant.q_min - plant.c_subsidy


@dataclass
class CutSet:
    """Cuts ``V_h(P, Q) >= a + b P + c Q`` for h = 0..T, with per-stage floors.

    Stage T holds the two affine pieces of the surrogate final cost.
    """

    intercept: np.ndarray  # (T+1, capacity)
    slope_p: np.ndarray
    slope_q: np.ndarray
    count: np.ndarray  # (T+1,)
    floor: np.ndarray  # (T+1,)

    @classmethod
    def empty(cls, horizon: int, capacity: int, plant: PlantSpec, floors: np.ndarray) -> "CutSet":
        a = np.zeros((horizon + 1, capacity + 2))
        b = np.zeros_like(a)
        c = np.zeros_like(a)
        n = np.zeros(horizon + 1, dtype=np.int64)
        a[horizon, :2] = -plant.c_subsidy
        c[horizon, 0] = plant.beta1
        c[horizon, 1] = plant.beta2
        n[horizon] = 2
        return cls(a, b, c, n, np.asarray(floors, dtype=float).copy())

    @property
    def horizon(self) -> int:
        return len(self.count) - 1

    def add(self, h: int, a: float, b: float, c: float) -> None:
        k = self.count[h]
        if k >= self.intercept.shape[1]:
            grow = self.intercept.shape[1]
            self.intercept = np.concatenate([self.intercept, np.zeros((self.horizon + 1, grow))], axis=1)
            self.slope_p = np.concatenate([self.slope_p, np.zeros((self.horizon + 1, grow))], axis=1)
            self.slope_q = np.concatenate([self.slope_q, np.zeros((self.horizon + 1, grow))], axis=1)
        self.intercept[h, k] = a
        self.slope_p[h, k] = b
        self.slope_q[h, k] = c
        self.count[h] = k + 1

    def cuts(self, h: int):
        k = self.count[h]
        return self.intercept[h, :k], self.slope_p[h, :k], self.slope_q[h, :k]

    def evaluate(self, h: int, P, Q):
        """Polyhedral lower approximation at (P, Q); exact surrogate cost at h = T."""
        a, b, c = self.cuts(h)
        P = np.asarray(P, dtype=float)
        Q = np.asarray(Q, dtype=float)
        vals = a + b * P[..., None] + c * Q[..., None]
        out = np.max(vals, axis=-1)
        if h < self.horizon:
            out = np.maximum(out, self.floor[h])
        return float(out) if out.ndim == 0 else out

    def pruned(self, p_range, q_range) -> "CutSet":
        """Copy without cuts that never exceed the others (and the floor) on the box.

        Cuts that touch the envelope within LP accuracy are kept, so the maximum
        over the box is unchanged.
        """
        T = self.horizon
        out = CutSet.empty(T, 8, _NoPlant, self.floor)
        out.count[T] = 0
        for h in range(T + 1):
            a, b, c = self.cuts(h)
            for k in _envelope(a, b, c, self.floor[h] if h < T else -np.inf, p_range, q_range):
                out.add(h, a[k], b[k], c[k])
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "intercept", "slope_p", "slope_q"])
            for h in range(self.horizon + 1):
                a, b, c = self.cuts(h)
                for k in range(len(a)):
                    w.writerow([h, repr(float(a[k])), repr(float(b[k])), repr(float(c[k]))])

    @classmethod
    def from_csv(cls, path, plant: PlantSpec, floors: np.ndarray) -> "CutSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        T = len(floors) - 1
        out = cls.empty(T, 8, plant, floors)
        out.count[T] = 0
        for r in rows:
            out.add(int(r["stage"]), float(r["intercept"]), float(r["slope_p"]), float(r["slope_q"]))
        return out


class _NoPlant:
    c_subsidy = 0.0
    beta1 = 0.0
    beta2 = 0.0


@njit(cache=True)
def _envelope_kernel(a, b, c, floor, plo, phi, qlo, qhi, keep, order):
    """Adds to ``keep`` every cut that exceeds the kept cuts somewhere on the box.

    For each candidate an LP maximizes its excess over the kept cuts in unit
    coordinates; the excess is then recomputed exactly at the LP point.
    """
    dp = phi - plo
    dq = qhi - qlo
    has_floor = np.isfinite(floor)
    for i in order:
        if keep[i]:
            continue
        m = 0
        for j in range(a.shape[0]):
            if keep[j]:
                m += 1
        if has_floor:
            m += 1
        A = np.zeros((m, 3))
        rhs = np.zeros(m)
        r = 0
        base_i = a[i] + b[i] * plo + c[i] * qlo
        for j in range(a.shape[0] + 1):
            if j < a.shape[0]:
                if not keep[j]:
                    continue
                aj, bj, cj = a[j], b[j], c[j]
            elif has_floor:
                aj, bj, cj = floor, 0.0, 0.0
            else:
                continue
            A[r, 0] = 1.0
            A[r, 1] = (bj - b[i]) * dp
            A[r, 2] = (cj - c[i]) * dq
            rhs[r] = base_i - (aj + bj * plo + cj * qlo)
            r += 1
        cost = np.array([-1.0, 0.0, 0.0])
        sense = np.full(m, -1, dtype=np.int64)
        lb = np.array([-np.inf, 0.0, 0.0])
        ub = np.array([np.inf, 1.0, 1.0])
        bscale = 1.0 + np.max(np.abs(rhs))
        status, it, M, basis, vstat, lo, hi = _solve_kernel(cost, A, rhs, sense, lb, ub, 2000,
                                                            FEAS_TOL * bscale, OPT_TOL * 2.0, PIVOT_TOL)
        if status != OPTIMAL:
            keep[i] = True
            continue
        x, _, _ = _extract(cost, rhs, M, basis, vstat, lo, hi, 3)
        u = min(max(x[1], 0.0), 1.0)
        v = min(max(x[2], 0.0), 1.0)
        excess = np.inf
        for rr in range(m):
            e = rhs[rr] - A[rr, 1] * u - A[rr, 2] * v
            if e < excess:
                excess = e
        if excess > 1e-8:
            keep[i] = True


def _envelope(a, b, c, floor, p_range, q_range, n_sample: int = 9):
    """Indices of the cuts that reach the upper envelope somewhere on the box.

    Cuts exceeding the rest by less than the LP accuracy may be dropped, which
    keeps the approximation a valid lower bound.
    """
    n = len(a)
    if n <= 1:
        return list(range(n))
    p_lo, p_hi = map(float, p_range)
    q_lo, q_hi = map(float, q_range)
    gp, gq = np.meshgrid(np.linspace(p_lo, p_hi, n_sample), np.linspace(q_lo, q_hi, n_sample))
    vals = a + b * gp.ravel()[:, None] + c * gq.ravel()[:, None]
    keep = np.zeros(n, dtype=np.bool_)
    top = np.argmax(vals, axis=1)
    keep[top[vals[np.arange(len(top)), top] > floor]] = True
    if not keep.any():
        keep[top[0]] = True
    order = np.argsort(-np.max(vals, axis=0), kind="stable").astype(np.int64)
    _envelope_kernel(np.asarray(a, float), np.asarray(b, float), np.asarray(c, float), float(floor),
                     p_lo, p_hi, q_lo, q_hi, keep, order)
    return np.nonzero(keep)[0].tolist()


@dataclass
class StageData:
    """Numeric data of one stage problem, independent of the incoming state."""

    lam: float
    c_grid: float
    c_ppa: float
    p: float
    e_max: float
    eg_min: float
    pv: np.ndarray
    prob: np.ndarray
    floor_next: float


def stage_data(h: int, lam, plant: PlantSpec, noise: NoiseModel, cuts: CutSet) -> StageData:
    st = support(noise, h).pv
    keep = st.probs > 0
    return StageData(float(lam[h]), float(plant.c_grid[h]), plant.c_ppa, plant.p, plant.e_max,
                     grid_floor(plant, noise), st.values[keep].copy(), st.probs[keep].copy(),
                     float(cuts.floor[h + 1]))


@njit(cache=True)
def _build(P, Q, lam, cg, cppa, p, emax, egmin, pv, prob, floor_next, ca, cb, cc, active):
    W = pv.shape[0]
    n = _NV0 + _NVW * W
    n_act = 0
    for w in range(W):
        for k in range(active.shape[1]):
            if active[w, k]:
                n_act += 1
    m = _NR0 + _NRW * W + n_act
    c = np.zeros(n)
    A = np.zeros((m, n))
    b = np.zeros(m)
    sense = np.zeros(m, dtype=np.int64)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    lb[1] = -np.inf
    lb[2] = -np.inf
    c[0] = cppa - lam
    offset = 0.0
    A[0, 1] = 1.0
    b[0] = P
    A[1, 2] = 1.0
    b[1] = Q
    A[2, 0] = 1.0
    A[2, 1] = -1.0
    sense[2] = -1
    r = _NR0 + _NRW * W
    for w in range(W):
        v = _NV0 + _NVW * w
        g, en, er, th = v, v + 1, v + 2, v + 3
        c[g] = -prob[w] * lam
        c[en] = prob[w] * cg
        c[th] = prob[w]
        offset -= prob[w] * lam * pv[w]
        lb[g] = egmin
        lb[er] = 0.0
        ub[er] = emax
        lb[th] = floor_next
        q = _NR0 + _NRW * w
        A[q, 0] = 1.0
        A[q, g] = 1.0
        b[q] = emax - pv[w]
        sense[q] = -1
        A[q + 1, g] = 1.0
        A[q + 1, en] = -1.0
        sense[q + 1] = -1
        A[q + 2, er] = 1.0
        A[q + 2, 0] = -1.0
        b[q + 2] = pv[w]
        sense[q + 2] = -1
        for k in range(active.shape[1]):
            if not active[w, k]:
                continue
            A[r, th] = 1.0
            A[r, 1] = -cb[k]
            A[r, 0] = cb[k]
            A[r, 2] = -cc[k]
            A[r, en] = -cc[k] * (1.0 - p)
            A[r, er] = cc[k] * p
            b[r] = ca[k]
            sense[r] = 1
            r += 1
    return c, A, b, sense, lb, ub, offset


@njit(cache=True)
def _extract(c, b, M, basis, vstat, lo, hi, n):
    m = M.shape[0]
    ntot = M.shape[1]
    xall = np.zeros(ntot)
    for j in range(ntot):
        if vstat[j] == 1:
            xall[j] = lo[j]
        elif vstat[j] == 2:
            xall[j] = hi[j]
    B = np.empty((m, m))
    cB = np.zeros(m)
    for i in range(m):
        B[:, i] = M[:, basis[i]]
        if basis[i] < n:
            cB[i] = c[basis[i]]
    rhs = b - M @ xall
    xB = np.linalg.solve(B, rhs)
    for i in range(m):
        xall[basis[i]] = xB[i]
    y = np.linalg.solve(B.T, cB)
    # sensitivity of basic values to rows 0 and 1 (the state copies)
    e = np.zeros((m, 2))
    e[0, 0] = 1.0
    e[1, 1] = 1.0
    g = np.linalg.solve(B, e)
    gx = np.zeros((ntot, 2))
    for i in range(m):
        gx[basis[i], 0] = g[i, 0]
        gx[basis[i], 1] = g[i, 1]
    return xall[:n].copy(), y, gx[:n].copy()


@njit(cache=True)
def _cut_violation(x, p, pv, ca, cb, cc, ncut, w, active):
    """Most violated inactive cut index and violation for outcome w."""
    v = _NV0 + _NVW * w
    en, er, th = v + 1, v + 2, v + 3
    pn = x[1] - x[0]
    qn = x[2] + (1.0 - p) * x[en] - p * x[er]
    best = -1
    worst = 0.0
    for k in range(ncut):
        if active[w, k]:
            continue
        viol = ca[k] + cb[k] * pn + cc[k] * qn - x[th]
        if viol > worst:
            worst = viol
            best = k
    return best, worst


@njit(cache=True)
def _stage_solve(P, Q, lam, cg, cppa, p, emax, egmin, pv, prob, floor_next, ca, cb, cc, ncut, hint):
    """Row-generation solve; returns (status, x, obj, y, gx, active)."""
    W = pv.shape[0]
    active = np.zeros((W, max(ncut, 1)), dtype=np.bool_)
    for w in range(W):
        for k in range(ncut):
            active[w, k] = hint[w, k]
    n = _NV0 + _NVW * W
    x = np.zeros(n)
    y = np.zeros(1)
    gx = np.zeros((n, 2))
    obj = np.nan
    for _ in range(_MAX_ROUNDS):
        c, A, b, sense, lb, ub, offset = _build(P, Q, lam, cg, cppa, p, emax, egmin, pv, prob,
                                                floor_next, ca, cb, cc, active)
        bscale = 1.0
        for i in range(b.shape[0]):
            bscale = max(bscale, 1.0 + abs(b[i]))
        cscale = 1.0
        for j in range(c.shape[0]):
            cscale = max(cscale, 1.0 + abs(c[j]))
        status, it, M, basis, vstat, lo, hi = _solve_kernel(c, A, b, sense, lb, ub, 20000,
                                                            FEAS_TOL * bscale, OPT_TOL * cscale,
                                                            PIVOT_TOL)
        if status != OPTIMAL:
            return status, x, obj, y, gx, active
        x, y, gx = _extract(c, b, M, basis, vstat, lo, hi, n)
        obj = c @ x + offset
        added = False
        for w in range(W):
            k, viol = _cut_violation(x, p, pv, ca, cb, cc, ncut, w, active)
            th = x[_NV0 + _NVW * w + 3]
            if k >= 0 and viol > 1e-9 * (1.0 + abs(th)):
                active[w, k] = True
                added = True
        if not added:
            return OPTIMAL, x, obj, y, gx, _binding(x, p, ca, cb, cc, ncut, active)
    return 5, x, obj, y, gx, active


@njit(cache=True)
def _binding(x, p, ca, cb, cc, ncut, active):
    """Active cuts that are tight at x (kept as the next solve's starting set)."""
    W = active.shape[0]
    out = np.zeros_like(active)
    pn = x[1] - x[0]
    for w in range(W):
        v = _NV0 + _NVW * w
        qn = x[2] + (1.0 - p) * x[v + 1] - p * x[v + 2]
        th = x[v + 3]
        for k in range(ncut):
            if active[w, k] and ca[k] + cb[k] * pn + cc[k] * qn >= th - 1e-7 * (1.0 + abs(th)):
                out[w, k] = True
    return out


@dataclass
class StageSolution:
    x: np.ndarray
    objective: float
    dual_p: float
    dual_q: float
    active: np.ndarray

    @property
    def e_ppa(self) -> float:
        return float(self.x[0])

    def recourse(self, w: int):
        v = _NV0 + _NVW * w
        return self.x[v], self.x[v + 1], self.x[v + 2], self.x[v + 3]


def _hint(active: Optional[np.ndarray], W: int, ncut: int) -> np.ndarray:
    hint = np.zeros((W, max(ncut, 1)), dtype=np.bool_)
    if active is not None:
        k = min(active.shape[1], ncut)
        hint[:, :k] = active[:, :k]
    return hint


def solve_stage(h: int, P: float, Q: float, lam, plant: PlantSpec, noise: NoiseModel,
                cuts: CutSet, hint: Optional[np.ndarray] = None) -> StageSolution:
    """Solve the stage problem at incoming state (P, Q) with cuts for stage h + 1.

    Intercepts and the floor are shifted by +c_s inside the LP for scaling.
    """
    sd = stage_data(h, lam, plant, noise, cuts)
    ca, cb, cc = cuts.cuts(h + 1)
    shift = plant.c_subsidy
    status, x, obj, y, _, active = _stage_solve(
        float(P), float(Q), sd.lam, sd.c_grid, sd.c_ppa, sd.p, sd.e_max, sd.eg_min, sd.pv, sd.prob,
        sd.floor_next + shift, ca + shift, cb, cc, len(ca), _hint(hint, len(sd.pv), len(ca)))
    if status != OPTIMAL:
        raise SddpError(f"stage {h} LP {STATUS_NAMES.get(status, status)} at P={P}, Q={Q}")
    x = x.copy()
    for w in range(len(sd.pv)):
        x[_NV0 + _NVW * w + 3] -= shift
    return StageSolution(x, float(obj) - shift, float(y[0]), float(y[1]), active)


def build_stage_problem(h: int, lam, P: float, Q: float, cuts: CutSet, plant: PlantSpec,
                        noise: NoiseModel, all_cuts: bool = True) -> LinearProgram:
    """Stage LP as a ``LinearProgram`` (all cuts of stage h + 1 included by default)."""
    sd = stage_data(h, lam, plant, noise, cuts)
    ca, cb, cc = cuts.cuts(h + 1)
    active = np.ones((len(sd.pv), max(len(ca), 1)), dtype=np.bool_) if all_cuts else \
        np.zeros((len(sd.pv), max(len(ca), 1)), dtype=np.bool_)
    if len(ca) == 0:
        active[:] = False
    c, A, b, sense, lb, ub, offset = _build(float(P), float(Q), sd.lam, sd.c_grid, sd.c_ppa, sd.p,
                                            sd.e_max, sd.eg_min, sd.pv, sd.prob, sd.floor_next,
                                            ca, cb, cc, active)
    W = len(sd.pv)
    names = ["e_ppa", "x_p", "x_q"]
    for w in range(W):
        names += [f"e_grid_{w}", f"e_n_{w}", f"e_r_{w}", f"theta_{w}"]
    rows = ["copy_p", "copy_q", "ppa_stock"]
    for w in range(W):
        rows += [f"mix_cap_{w}", f"pos_part_{w}", f"renew_{w}"]
    rows += [f"cut_{i}" for i in range(A.shape[0] - len(rows))]
    return LinearProgram(c, A, b, sense, lb, ub, var_names=names, row_names=rows, offset=offset)


@dataclass
class SddpResult:
    cuts: CutSet
    lower_bound: float
    history: List[float] = field(default_factory=list)
    lam: Optional[np.ndarray] = None


def sddp_solve(lam, plant: PlantSpec, noise: NoiseModel, iters: int = 60, seed: int = 0,
               initial_state=None) -> SddpResult:
    """Single forward path per iteration, one cut per visited stage, keep all cuts."""
    lam = np.asarray(lam, dtype=float)
    T = noise.horizon
    if lam.shape != (T,) or plant.horizon != T:
        raise ValueError("multiplier, plant and noise disagree on the horizon")
    P0, Q0 = (plant.ppa_cap, 0.0) if initial_state is None else initial_state
    cuts = CutSet.empty(T, max(iters, 1) + 2, plant, theta_floors(lam, plant, noise))
    rng = np.random.default_rng(seed)
    data = [stage_data(h, lam, plant, noise, cuts) for h in range(T)]
    pools = [BasisPool(len(sd.pv)) for sd in data]
    shift = plant.c_subsidy
    history = []

    def stage(h, P, Q, where):
        ca, cb, cc = cuts.cuts(h + 1)
        status, out = pools[h].solve(P, Q, data[h], ca, cb, cc, shift)
        if status != OPTIMAL:
            raise SddpError(f"{where}: stage {h} LP {STATUS_NAMES.get(status, status)} at P={P}, Q={Q}")
        return out

    for it in range(iters):
        states = np.empty((T, 2))
        P, Q = P0, Q0
        for h in range(T):
            states[h] = P, Q
            _, _, _, x = stage(h, P, Q, f"forward pass, iteration {it}")
            w = int(rng.choice(len(data[h].pv), p=data[h].prob))
            v = _NV0 + _NVW * w
            P = P - x[0]
            Q = Q + (1 - plant.p) * x[v + 1] - plant.p * x[v + 2]
        for h in range(T - 1, -1, -1):
            P, Q = states[h]
            obj, yp, yq, _ = stage(h, P, Q, f"backward pass, iteration {it}")
            cuts.add(h, obj - yp * P - yq * Q, yp, yq)
        history.append(stage(0, P0, Q0, "bound")[0])
    lb = history[-1] if history else stage(0, P0, Q0, "bound")[0]
    return SddpResult(cuts, lb, history, lam.copy())


# --- batched simulation with basis reuse -------------------------------------------------

_POOL = 64


@njit(cache=True)
def _candidate_ok(x, P, Q, p, emax, egmin, pv, floor_next, ca, cb, cc, ncut):
    W = pv.shape[0]
    tol = 1e-9 * (1.0 + emax)
    if x[0] < -tol or x[0] > P + tol:
        return False
    for w in range(W):
        v = _NV0 + _NVW * w
        g, en, er, th = x[v], x[v + 1], x[v + 2], x[v + 3]
        if g < egmin - tol or en < -tol or er < -tol or er > emax + tol:
            return False
        if x[0] + g + pv[w] > emax + tol or g > en + tol or er > x[0] + pv[w] + tol:
            return False
        if th < floor_next - 1e-9 * (1.0 + abs(floor_next)):
            return False
        qn = Q + (1.0 - p) * en - p * er
        pn = P - x[0]
        ttol = 1e-9 * (1.0 + abs(th))
        for k in range(ncut):
            if ca[k] + cb[k] * pn + cc[k] * qn > th + ttol:
                return False
    return True


@njit(cache=True)
def _objective(x, lam, cg, cppa, pv, prob):
    obj = (cppa - lam) * x[0]
    for w in range(pv.shape[0]):
        v = _NV0 + _NVW * w
        obj += prob[w] * (-lam * (x[v] + pv[w]) + cg * x[v + 1] + x[v + 3])
    return obj


@njit(cache=True)
def _pooled_solve(P, Q, lam, cg, cppa, p, emax, egmin, pv, prob, floor_next, ca, cb, cc, ncut,
                  pool_x0, pool_g, pool_y, pool_n, hint, x):
    """Reuse a stored optimal basis when its affine solution stays feasible, else solve.

    Returns (status, objective, dual_p, dual_q, fresh) and writes the solution to x.
    """
    n = x.shape[0]
    for e in range(pool_n[0]):
        for j in range(n):
            x[j] = pool_x0[e, j] + pool_g[e, j, 0] * P + pool_g[e, j, 1] * Q
        if _candidate_ok(x, P, Q, p, emax, egmin, pv, floor_next, ca, cb, cc, ncut):
            y0 = pool_y[e, 0]
            y1 = pool_y[e, 1]
            if e > 0:
                tx = pool_x0[e].copy()
                tg = pool_g[e].copy()
                ty = pool_y[e].copy()
                for k in range(e, 0, -1):
                    pool_x0[k] = pool_x0[k - 1]
                    pool_g[k] = pool_g[k - 1]
                    pool_y[k] = pool_y[k - 1]
                pool_x0[0] = tx
                pool_g[0] = tg
                pool_y[0] = ty
            return OPTIMAL, _objective(x, lam, cg, cppa, pv, prob), y0, y1, 0
    status, xs, obj, y, gx, active = _stage_solve(P, Q, lam, cg, cppa, p, emax, egmin, pv, prob,
                                                  floor_next, ca, cb, cc, ncut, hint)
    if status != OPTIMAL:
        return status, np.nan, np.nan, np.nan, 1
    for w in range(hint.shape[0]):
        for k in range(hint.shape[1]):
            hint[w, k] = active[w, k]
    for j in range(n):
        x[j] = xs[j]
    cap = pool_x0.shape[0]
    last = min(pool_n[0], cap - 1)
    for k in range(last, 0, -1):
        pool_x0[k] = pool_x0[k - 1]
        pool_g[k] = pool_g[k - 1]
        pool_y[k] = pool_y[k - 1]
    pool_x0[0] = xs - gx[:, 0] * P - gx[:, 1] * Q
    pool_g[0] = gx
    pool_y[0, 0] = y[0]
    pool_y[0, 1] = y[1]
    pool_n[0] = min(pool_n[0] + 1, cap)
    return OPTIMAL, obj, y[0], y[1], 1


@njit(cache=True)
def _simulate_stage(P, Q, lam, cg, cppa, p, emax, egmin, pv, prob, floor_next, ca, cb, cc,
                    ncut, pool_x0, pool_g, pool_y, pool_n, hint, out_x):
    """Decisions for many paths at one stage; returns number of fresh LP solves or -status."""
    n_paths = P.shape[0]
    n = out_x.shape[1]
    x = np.empty(n)
    fresh = 0
    for i in range(n_paths):
        status, obj, y0, y1, f = _pooled_solve(P[i], Q[i], lam, cg, cppa, p, emax, egmin, pv, prob,
                                               floor_next, ca, cb, cc, ncut, pool_x0, pool_g,
                                               pool_y, pool_n, hint, x)
        if status != OPTIMAL:
            return -status
        fresh += f
        for j in range(n):
            out_x[i, j] = x[j]
    return fresh


class BasisPool:
    """Recently optimal bases of one stage problem, most recent first."""

    def __init__(self, n_outcomes: int, capacity: int = _POOL):
        n = _NV0 + _NVW * n_outcomes
        self.x0 = np.zeros((capacity, n))
        self.g = np.zeros((capacity, n, 2))
        self.y = np.zeros((capacity, 2))
        self.n = np.zeros(1, dtype=np.int64)
        self.hint = np.zeros((n_outcomes, 1), dtype=np.bool_)
        self.x = np.zeros(n)

    def hint_for(self, ncut: int) -> np.ndarray:
        W, k = self.hint.shape
        if k < max(ncut, 1):
            grown = np.zeros((W, max(ncut, 1)), dtype=np.bool_)
            grown[:, :k] = self.hint
            self.hint = grown
        return self.hint

    def solve(self, P: float, Q: float, sd: "StageData", ca, cb, cc, shift: float):
        """(objective, dual_p, dual_q, solution x) with theta reported unshifted."""
        hint = self.hint_for(len(ca))
        status, obj, y0, y1, _ = _pooled_solve(
            float(P), float(Q), sd.lam, sd.c_grid, sd.c_ppa, sd.p, sd.e_max, sd.eg_min, sd.pv,
            sd.prob, sd.floor_next + shift, ca + shift, cb, cc, len(ca), self.x0, self.g, self.y,
            self.n, hint, self.x)
        if status != OPTIMAL:
            return status, None
        x = self.x.copy()
        for w in range(len(sd.pv)):
            x[_NV0 + _NVW * w + 3] -= shift
        return status, (obj - shift, y0, y1, x)


@dataclass
class AllocationSimulation:
    supply: np.ndarray  # (T,) mean e_ppa + e_grid + e_pv
    mean_cost: float
    e_ppa: np.ndarray  # (n_paths, T)
    e_grid: np.ndarray
    e_pv: np.ndarray
    q_final: np.ndarray
    costs: np.ndarray
    fresh_solves: int


def simulate_allocation_paths(cuts: CutSet, lam, plant: PlantSpec, noise: NoiseModel,
                              pv_index: np.ndarray) -> AllocationSimulation:
    """Roll the cut-greedy allocation over given PV outcome indices (n_paths, T)."""
    lam = np.asarray(lam, dtype=float)
    T = noise.horizon
    n_paths = pv_index.shape[0]
    P = np.full(n_paths, plant.ppa_cap)
    Q = np.zeros(n_paths)
    e_ppa = np.zeros((n_paths, T))
    e_grid = np.zeros((n_paths, T))
    e_pv = np.zeros((n_paths, T))
    cost = np.zeros(n_paths)
    fresh_total = 0
    for h in range(T):
        sd = stage_data(h, lam, plant, noise, cuts)
        pv_all = support(noise, h).pv
        keep = np.nonzero(pv_all.probs > 0)[0]
        remap = -np.ones(len(pv_all.values), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        widx = remap[pv_index[:, h]]
        if np.any(widx < 0):
            raise SddpError("sampled a zero-probability PV outcome")
        ca, cb, cc = cuts.cuts(h + 1)
        pool = BasisPool(len(sd.pv))
        out_x = np.zeros((n_paths, len(pool.x)))
        shift = plant.c_subsidy
        fresh = _simulate_stage(P, Q, sd.lam, sd.c_grid, sd.c_ppa, sd.p, sd.e_max, sd.eg_min,
                                sd.pv, sd.prob, sd.floor_next + shift, ca + shift, cb, cc, len(ca),
                                pool.x0, pool.g, pool.y, pool.n, pool.hint_for(len(ca)), out_x)
        if fresh < 0:
            raise SddpError(f"stage {h} LP {STATUS_NAMES.get(-fresh, -fresh)} during simulation")
        fresh_total += fresh
        base = _NV0 + _NVW * widx
        rows = np.arange(n_paths)
        ep = out_x[:, 0]
        g = out_x[rows, base]
        en = out_x[rows, base + 1]
        er = out_x[rows, base + 2]
        pv = sd.pv[widx]
        e_ppa[:, h] = ep
        e_grid[:, h] = g
        e_pv[:, h] = pv
        cost += sd.c_ppa * ep + sd.c_grid * en - sd.lam * (ep + g + pv)
        P = P - ep
        Q = Q + (1 - plant.p) * en - plant.p * er
    cost += surrogate_final_cost(Q, plant.beta1, plant.beta2, plant.c_subsidy)
    supply = (e_ppa + e_grid + e_pv).mean(axis=0)
    return AllocationSimulation(supply, float(cost.mean()), e_ppa, e_grid, e_pv, Q, cost, fresh_total)


def sample_pv_indices(noise: NoiseModel, n_paths: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.empty((n_paths, noise.horizon), dtype=np.int64)
    for h in range(noise.horizon):
        pv = support(noise, h).pv
        out[:, h] = rng.choice(len(pv.values), size=n_paths, p=pv.probs)
    return out


def simulate_allocation(cuts: CutSet, lam, plant: PlantSpec, noise: NoiseModel, n_paths: int = 2300,
                        seed: int = 0):
    """Mean supply profile (kWh per hour) and mean cost of the cut-greedy allocation."""
    sim = simulate_allocation_paths(cuts, lam, plant, noise, sample_pv_indices(noise, n_paths, seed))
    return sim.supply, sim.mean_cost


# --- constructive maps between the two electricity formulations --------------------------

@dataclass
class AllocationSequence:
    """One scenario's allocation: arrays of length T (plus e_n, e_r when lifted)."""

    e_ppa: np.ndarray
    e_grid: np.ndarray
    e_pv: np.ndarray
    e_n: Optional[np.ndarray] = None
    e_r: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None  # length T + 1

    @property
    def lifted(self) -> bool:
        return self.e_n is not None


def _base_violations(seq: AllocationSequence, plant: PlantSpec, eg_min: float, tol: float) -> List[str]:
    errs = []
    if np.any(seq.e_ppa < -tol):
        errs.append("negative PPA draw")
    if seq.e_ppa.sum() > plant.ppa_cap + tol:
        errs.append("PPA budget exceeded")
    if np.any(seq.e_ppa + seq.e_grid + seq.e_pv > plant.e_max + tol):
        errs.append("mix cap exceeded")
    if np.any(seq.e_grid < eg_min - tol):
        errs.append("grid floor violated")
    return errs


def check_original(seq: AllocationSequence, plant: PlantSpec, eg_min: float, tol: float = 1e-9) -> List[str]:
    """Violations of the formulation with nonlinear cumulative dynamics."""
    errs = _base_violations(seq, plant, eg_min, tol)
    if seq.q is not None:
        q = np.concatenate([[0.0], np.cumsum((1 - plant.p) * np.maximum(seq.e_grid, 0)
                                             - plant.p * np.minimum(plant.e_max, seq.e_ppa + seq.e_pv))])
        if np.max(np.abs(q - seq.q)) > tol * (1 + np.abs(q).max()):
            errs.append("cumulative state inconsistent with dynamics")
    return errs


def check_linearized(seq: AllocationSequence, plant: PlantSpec, eg_min: float, tol: float = 1e-9) -> List[str]:
    """Violations of the linearized formulation."""
    errs = _base_violations(seq, plant, eg_min, tol)
    if not seq.lifted:
        return errs + ["missing linearization variables"]
    if np.any(seq.e_n < -tol) or np.any(seq.e_n < seq.e_grid - tol):
        errs.append("e_n below positive part")
    if np.any(seq.e_r > plant.e_max + tol) or np.any(seq.e_r > seq.e_ppa + seq.e_pv + tol):
        errs.append("e_r above its caps")
    if seq.q is not None:
        q = np.concatenate([[0.0], np.cumsum((1 - plant.p) * seq.e_n - plant.p * seq.e_r)])
        if np.max(np.abs(q - seq.q)) > tol * (1 + np.abs(q).max()):
            errs.append("cumulative state inconsistent with linear dynamics")
    return errs


def lift_gamma(seq: AllocationSequence, plant: PlantSpec, eg_min: float) -> AllocationSequence:
    """Append e_n = (e_grid)+ and e_r = min(E_max, e_ppa + e_pv)."""
    errs = check_original(seq, plant, eg_min)
    if errs:
        raise ValueError("infeasible allocation: " + "; ".join(errs))
    e_n = np.maximum(seq.e_grid, 0.0)
    e_r = np.minimum(plant.e_max, seq.e_ppa + seq.e_pv)
    q = np.concatenate([[0.0], np.cumsum((1 - plant.p) * e_n - plant.p * e_r)])
    return AllocationSequence(seq.e_ppa.copy(), seq.e_grid.copy(), seq.e_pv.copy(), e_n, e_r, q)


def project_phi(seq: AllocationSequence, plant: PlantSpec, eg_min: float) -> AllocationSequence:
    """Drop the linearization variables and recompute Q with the true dynamics."""
    errs = check_linearized(seq, plant, eg_min)
    if errs:
        raise ValueError("infeasible allocation: " + "; ".join(errs))
    q = np.concatenate([[0.0], np.cumsum((1 - plant.p) * np.maximum(seq.e_grid, 0)
                                         - plant.p * np.minimum(plant.e_max, seq.e_ppa + seq.e_pv))])
    return AllocationSequence(seq.e_ppa.copy(), seq.e_grid.copy(), seq.e_pv.copy(), q=q)


def allocation_cost(seq: AllocationSequence, lam, plant: PlantSpec) -> float:
    """Lagrangian electricity cost with the surrogate final cost."""
    lam = np.asarray(lam, dtype=float)
    pos = seq.e_n if seq.lifted else np.maximum(seq.e_grid, 0.0)
    if seq.q is not None:
        qT = seq.q[-1]
    elif seq.lifted:
        qT = np.sum((1 - plant.p) * seq.e_n - plant.p * seq.e_r)
    else:
        qT = np.sum((1 - plant.p) * pos - plant.p * np.minimum(plant.e_max, seq.e_ppa + seq.e_pv))
    stage = plant.c_ppa * seq.e_ppa + plant.c_grid * pos - lam * (seq.e_ppa + seq.e_grid + seq.e_pv)
    return float(stage.sum() + surrogate_final_cost(qT, plant.beta1, plant.beta2, plant.c_subsidy))
