"""Bounded-variable primal simplex for small dense linear programs.

Rows are brought to equality form with one slack per row, so that
``A x + s = b`` with slack bounds encoding the row sense. Phase 1 minimizes the
sum of artificial variables; phase 2 optimizes the true objective from the
phase 1 basis. The basis inverse is kept explicitly and refreshed periodically.

Duals follow the convention ``y = d obj / d b``; reduced costs are ``c - A^T y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

LE, EQ, GE = -1, 0, 1
OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT, NUMERICAL = 0, 1, 2, 3, 4
STATUS_NAMES = {
    OPTIMAL: "optimal",
    INFEASIBLE: "infeasible",
    UNBOUNDED: "unbounded",
    ITERATION_LIMIT: "iteration_limit",
    NUMERICAL: "numerical",
    5: "row_generation_limit",
}

FEAS_TOL = 1e-8
OPT_TOL = 1e-9
PIVOT_TOL = 1e-10

# nonbasic status codes
_BASIC, _AT_LOWER, _AT_UPPER, _FREE_ZERO = 0, 1, 2, 3

_REINVERT_EVERY = 64
_BLAND_AFTER = 40


class LpError(RuntimeError):
    """Raised by callers that require an optimal solve."""


@dataclass
class LinearProgram:
    """min c.x  s.t.  A x (sense) b,  lb <= x <= ub.

    ``sense`` holds -1 for <=, 0 for =, +1 for >=.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    sense: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    var_names: Optional[Sequence[str]] = None
    row_names: Optional[Sequence[str]] = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.ascontiguousarray(self.c, dtype=np.float64)
        n = self.c.shape[0]
        A = np.asarray(self.A, dtype=np.float64)
        if A.size == 0:
            A = A.reshape(0, n)
        self.A = np.ascontiguousarray(A)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64).reshape(-1)
        self.sense = np.ascontiguousarray(self.sense, dtype=np.int64).reshape(-1)
        self.lb = np.ascontiguousarray(self.lb, dtype=np.float64)
        self.ub = np.ascontiguousarray(self.ub, dtype=np.float64)
        m = self.b.shape[0]
        if self.A.shape != (m, n):
            raise ValueError(f"A has shape {self.A.shape}, expected {(m, n)}")
        if self.sense.shape != (m,) or np.any(np.abs(self.sense) > 1):
            raise ValueError("sense must hold -1, 0 or 1 per row")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("objective, matrix and rhs must be finite")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb > self.ub):
            raise ValueError("need lb <= ub")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("bounds must admit a finite value")

    @property
    def shape(self):
        return self.A.shape


@dataclass
class LpSolution:
    status: int
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    basis: np.ndarray = field(repr=False)
    var_status: np.ndarray = field(repr=False)

    @property
    def status_name(self) -> str:
        return STATUS_NAMES[self.status]

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@njit(cache=True)
def _price(d, vstat, lo, hi, bland, opt_tol):
    """Entering index and direction (+1 increase, -1 decrease), or -1."""
    best = -1
    best_val = 0.0
    direction = 0
    for j in range(d.shape[0]):
        st = vstat[j]
        if st == _BASIC or lo[j] == hi[j]:
            continue
        dj = d[j]
        cand = 0
        if st == _AT_LOWER:
            if dj < -opt_tol:
                cand = 1
        elif st == _AT_UPPER:
            if dj > opt_tol:
                cand = -1
        else:
            if dj < -opt_tol:
                cand = 1
            elif dj > opt_tol:
                cand = -1
        if cand != 0:
            if bland:
                return j, cand
            if abs(dj) > best_val:
                best_val = abs(dj)
                best = j
                direction = cand
    return best, direction


@njit(cache=True)
def _ratio(xB, basis, alpha, dirn, lo, hi, bland, feas_tol, piv_tol):
    """Harris two-pass ratio test; returns (step, leaving row, hits upper)."""
    m = xB.shape[0]
    tmax = np.inf
    for i in range(m):
        a = alpha[i] * dirn
        k = basis[i]
        if a > piv_tol and lo[k] > -np.inf:
            t = (xB[i] - lo[k] + feas_tol) / a
            if t < tmax:
                tmax = t
        elif a < -piv_tol and hi[k] < np.inf:
            t = (hi[k] - xB[i] + feas_tol) / (-a)
            if t < tmax:
                tmax = t
    if tmax == np.inf:
        return np.inf, -1, False
    row = -1
    best_a = 0.0
    best_t = np.inf
    to_upper = False
    for i in range(m):
        a = alpha[i] * dirn
        k = basis[i]
        t = np.inf
        up = False
        if a > piv_tol and lo[k] > -np.inf:
            t = (xB[i] - lo[k]) / a
        elif a < -piv_tol and hi[k] < np.inf:
            t = (hi[k] - xB[i]) / (-a)
            up = True
        if t <= tmax:
            if bland:
                if t < best_t - 1e-12 or (abs(t - best_t) <= 1e-12 and (row < 0 or k < basis[row])):
                    best_t = t
                    row = i
                    to_upper = up
            elif abs(a) > best_a:
                best_a = abs(a)
                row = i
                best_t = t
                to_upper = up
    if best_t < 0.0:
        best_t = 0.0
    return best_t, row, to_upper


@njit(cache=True)
def _nonbasic_value(j, vstat, lo, hi):
    st = vstat[j]
    if st == _AT_LOWER:
        return lo[j]
    if st == _AT_UPPER:
        return hi[j]
    return 0.0


@njit(cache=True)
def _recompute(M, b, basis, vstat, lo, hi):
    m = M.shape[0]
    ntot = M.shape[1]
    B = np.empty((m, m))
    for i in range(m):
        B[:, i] = M[:, basis[i]]
    rhs = b.copy()
    for j in range(ntot):
        if vstat[j] != _BASIC:
            v = _nonbasic_value(j, vstat, lo, hi)
            if v != 0.0:
                rhs -= v * M[:, j]
    Binv = np.ascontiguousarray(np.linalg.inv(B))
    xB = Binv @ rhs
    return Binv, xB


@njit(cache=True)
def _simplex_phase(M, b, cost, lo, hi, basis, vstat, Binv, xB, max_iter, feas_tol, opt_tol, piv_tol, it0):
    """Run primal simplex iterations; returns (status, iterations, Binv, xB)."""
    m = M.shape[0]
    it = it0
    degenerate = 0
    since_reinvert = 0
    cB = np.empty(m)
    while True:
        if it >= max_iter:
            return ITERATION_LIMIT, it, Binv, xB
        for i in range(m):
            cB[i] = cost[basis[i]]
        y = cB @ Binv
        d = cost - y @ M
        bland = degenerate >= _BLAND_AFTER
        j, dirn = _price(d, vstat, lo, hi, bland, opt_tol)
        if j < 0:
            return OPTIMAL, it, Binv, xB
        alpha = Binv @ np.ascontiguousarray(M[:, j])
        t, row, to_upper = _ratio(xB, basis, alpha, dirn, lo, hi, bland, feas_tol, piv_tol)
        span = hi[j] - lo[j]
        if span < t:
            # bound flip of the entering variable
            xB -= (span * dirn) * alpha
            vstat[j] = _AT_UPPER if dirn > 0 else _AT_LOWER
            it += 1
            degenerate = 0
            continue
        if row < 0:
            return UNBOUNDED, it, Binv, xB
        if abs(alpha[row]) < piv_tol:
            return NUMERICAL, it, Binv, xB
        x_enter = _nonbasic_value(j, vstat, lo, hi) + t * dirn
        xB -= (t * dirn) * alpha
        leaving = basis[row]
        if to_upper:
            vstat[leaving] = _AT_UPPER
        elif lo[leaving] > -np.inf:
            vstat[leaving] = _AT_LOWER
        else:
            vstat[leaving] = _FREE_ZERO
        basis[row] = j
        vstat[j] = _BASIC
        xB[row] = x_enter
        # product-form update of the inverse
        piv = alpha[row]
        prow = Binv[row, :] / piv
        for i in range(m):
            if i != row and alpha[i] != 0.0:
                Binv[i, :] -= alpha[i] * prow
        Binv[row, :] = prow
        it += 1
        since_reinvert += 1
        if t <= 1e-12:
            degenerate += 1
        else:
            degenerate = 0
        if since_reinvert >= _REINVERT_EVERY:
            Binv, xB = _recompute(M, b, basis, vstat, lo, hi)
            since_reinvert = 0


@njit(cache=True)
def _solve_kernel(c, A, b, sense, lb, ub, max_iter, feas_tol, opt_tol, piv_tol):
    m, n = A.shape
    # columns: structural n, slacks m, artificials m
    ntot = n + 2 * m
    M = np.zeros((m, ntot))
    M[:, :n] = A
    for i in range(m):
        M[i, n + i] = 1.0
    lo = np.empty(ntot)
    hi = np.empty(ntot)
    lo[:n] = lb
    hi[:n] = ub
    for i in range(m):
        if sense[i] == -1:
            lo[n + i] = 0.0
            hi[n + i] = np.inf
        elif sense[i] == 1:
            lo[n + i] = -np.inf
            hi[n + i] = 0.0
        else:
            lo[n + i] = 0.0
            hi[n + i] = 0.0
        lo[n + m + i] = 0.0
        hi[n + m + i] = np.inf
    vstat = np.empty(ntot, dtype=np.int64)
    for j in range(n):
        if lb[j] > -np.inf:
            vstat[j] = _AT_LOWER
        elif ub[j] < np.inf:
            vstat[j] = _AT_UPPER
        else:
            vstat[j] = _FREE_ZERO
    r = b.copy()
    for j in range(n):
        v = _nonbasic_value(j, vstat, lo, hi)
        if v != 0.0:
            r -= v * A[:, j]
    basis = np.empty(m, dtype=np.int64)
    n_art = 0
    for i in range(m):
        s = n + i
        a = n + m + i
        if lo[s] - feas_tol <= r[i] <= hi[s] + feas_tol:
            basis[i] = s
            vstat[s] = _BASIC
            vstat[a] = _AT_LOWER
            hi[a] = 0.0
        else:
            vstat[s] = _AT_LOWER if lo[s] > -np.inf else _AT_UPPER
            sval = _nonbasic_value(s, vstat, lo, hi)
            M[i, a] = 1.0 if r[i] - sval > 0 else -1.0
            basis[i] = a
            vstat[a] = _BASIC
            n_art += 1
    Binv, xB = _recompute(M, b, basis, vstat, lo, hi)
    it = 0
    if n_art > 0:
        cost1 = np.zeros(ntot)
        cost1[n + m:] = 1.0
        status, it, Binv, xB = _simplex_phase(M, b, cost1, lo, hi, basis, vstat, Binv, xB,
                                              max_iter, feas_tol, opt_tol, piv_tol, 0)
        if status != OPTIMAL:
            return status, it, M, basis, vstat, lo, hi
        infeas = 0.0
        for i in range(m):
            if basis[i] >= n + m:
                infeas += max(xB[i], 0.0)
        bnorm = 0.0
        for i in range(m):
            bnorm = max(bnorm, abs(b[i]))
        if infeas > feas_tol * (1.0 + bnorm):
            return INFEASIBLE, it, M, basis, vstat, lo, hi
        # freeze artificials and drive basic ones out where possible
        for k in range(n + m, ntot):
            hi[k] = 0.0
            if vstat[k] != _BASIC:
                vstat[k] = _AT_LOWER
        for row in range(m):
            if basis[row] < n + m:
                continue
            for j in range(n + m):
                if vstat[j] == _BASIC or lo[j] == hi[j]:
                    continue
                alpha = Binv @ np.ascontiguousarray(M[:, j])
                if abs(alpha[row]) > 1e-7:
                    leaving = basis[row]
                    basis[row] = j
                    vstat[j] = _BASIC
                    vstat[leaving] = _AT_LOWER
                    Binv, xB = _recompute(M, b, basis, vstat, lo, hi)
                    break
    cost2 = np.zeros(ntot)
    cost2[:n] = c
    status, it, Binv, xB = _simplex_phase(M, b, cost2, lo, hi, basis, vstat, Binv, xB,
                                          max_iter, feas_tol, opt_tol, piv_tol, it)
    return status, it, M, basis, vstat, lo, hi


def _finish(lp: LinearProgram, status, it, M, basis, vstat, lo, hi) -> LpSolution:
    m, n = lp.A.shape
    ntot = M.shape[1]
    xall = np.zeros(ntot)
    for j in range(ntot):
        if vstat[j] == _AT_LOWER:
            xall[j] = lo[j]
        elif vstat[j] == _AT_UPPER:
            xall[j] = hi[j]
    if status != OPTIMAL:
        nan = np.full(n, np.nan)
        return LpSolution(status, nan, np.nan, np.full(m, np.nan), nan, it, basis.copy(), vstat.copy())
    if m > 0:
        B = M[:, basis]
        rhs = lp.b - M @ xall
        try:
            xB = np.linalg.solve(B, rhs)
            cB = np.array([lp.c[k] if k < n else 0.0 for k in basis])
            y = np.linalg.solve(B.T, cB)
        except np.linalg.LinAlgError:
            nan = np.full(n, np.nan)
            return LpSolution(NUMERICAL, nan, np.nan, np.full(m, np.nan), nan, it, basis.copy(), vstat.copy())
        xall[basis] = xB
    else:
        y = np.zeros(0)
    x = xall[:n]
    x = np.minimum(np.maximum(x, lp.lb), lp.ub)
    d = lp.c - lp.A.T @ y
    obj = float(lp.c @ x) + lp.offset
    return LpSolution(OPTIMAL, x, obj, y, d, it, basis.copy(), vstat.copy())


def solve_lp(lp: LinearProgram, max_iter: int = 20000) -> LpSolution:
    """Solve ``lp``; never raises on infeasible or unbounded input, check ``status``."""
    m, n = lp.A.shape
    bscale = 1.0 + (np.abs(lp.b).max() if m else 0.0)
    cscale = 1.0 + (np.abs(lp.c).max() if n else 0.0)
    out = _solve_kernel(lp.c, lp.A, lp.b, lp.sense, lp.lb, lp.ub, max_iter,
                        FEAS_TOL * bscale, OPT_TOL * cscale, PIVOT_TOL)
    return _finish(lp, *out)


def solve_or_raise(lp: LinearProgram, context: str = "") -> LpSolution:
    sol = solve_lp(lp)
    if not sol.optimal:
        raise LpError(f"LP {sol.status_name}{' (' + context + ')' if context else ''}")
    return sol


def primal_residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest violation of rows and bounds at ``x``."""
    ax = lp.A @ x - lp.b
    viol = np.where(lp.sense == LE, np.maximum(ax, 0),
                    np.where(lp.sense == GE, np.maximum(-ax, 0), np.abs(ax)))
    bound = np.maximum(lp.lb - x, 0).max(initial=0.0) + np.maximum(x - lp.ub, 0).max(initial=0.0)
    return float(max(viol.max(initial=0.0), bound))


def dual_objective(lp: LinearProgram, sol: LpSolution) -> float:
    """b.y plus the bound terms of the reduced costs (equals c.x at optimality)."""
    d = sol.reduced_costs
    bound_term = np.where(d > 0, np.where(np.isfinite(lp.lb), lp.lb, 0.0),
                          np.where(np.isfinite(lp.ub), lp.ub, 0.0)) * d
    return float(lp.b @ sol.duals + bound_term.sum()) + lp.offset


def write_lp_format(lp: LinearProgram, path) -> None:
    """Write the program in CPLEX LP text format."""
    m, n = lp.A.shape
    names = list(lp.var_names) if lp.var_names is not None else [f"x{j}" for j in range(n)]
    rows = list(lp.row_names) if lp.row_names is not None else [f"r{i}" for i in range(m)]

    def expr(coefs):
        terms = [f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[j]}" for j, v in enumerate(coefs) if v != 0]
        return " ".join(terms) if terms else "0 " + names[0]

    ops = {LE: "<=", EQ: "=", GE: ">="}
    lines = ["Minimize", f" obj: {expr(lp.c)}", "Subject To"]
    for i in range(m):
        lines.append(f" {rows[i]}: {expr(lp.A[i])} {ops[int(lp.sense[i])]} {lp.b[i]:.17g}")
    lines.append("Bounds")
    for j in range(n):
        lo = "-inf" if lp.lb[j] == -np.inf else f"{lp.lb[j]:.17g}"
        hi = "+inf" if lp.ub[j] == np.inf else f"{lp.ub[j]:.17g}"
        lines.append(f" {lo} <= {names[j]} <= {hi}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
