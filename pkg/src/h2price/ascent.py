"""Deterministic-multiplier dual ascent.

Each iteration solves the operational subproblem by dynamic programming and the
electricity subproblem by SDDP at the current multiplier, then moves the
multiplier along expected consumption minus expected supply.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .model import PlantSpec
from .policy import PolicyContext, PolicyEvaluation, gap_report, simulate_policy
from .scenario import NoiseModel
from .sddp import SddpResult, sddp_solve, simulate_allocation
from .sdp import OperationalGrids, ValueFunctionO, forward_law, initial_value, solve_operational


@dataclass
class Schedule:
    iterations: int = 51
    step: float = 5e-6
    halving: int = 15
    sddp_iters: int = 60
    mc_paths: int = 2300
    eval_every: int = 5
    eval_paths: int = 5000
    final_paths: int = 5000
    n_ppa: int = 30

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not (np.isfinite(self.step) and self.step >= 0):
            raise ValueError("step must be a nonnegative number")
        if self.halving < 1 or self.sddp_iters < 1 or self.mc_paths < 1:
            raise ValueError("halving, sddp_iters and mc_paths must be positive")
        if self.eval_every < 0 or self.eval_paths < 0 or self.final_paths < 0:
            raise ValueError("evaluation settings must be nonnegative")

    def step_at(self, k: int) -> float:
        return self.step * 0.5 ** (k // self.halving)


@dataclass
class Multiplier:
    lam: np.ndarray
    k: int = 0
    step: float = 0.0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if self.lam.ndim != 1 or not np.all(np.isfinite(self.lam)):
            raise ValueError("multiplier must be a finite vector")


def init_multiplier(plant: PlantSpec) -> Multiplier:
    """Price of one kWh when a fraction p must be grid and the rest PPA."""
    return Multiplier(plant.p * plant.c_grid + (1 - plant.p) * plant.c_ppa)


def derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


@dataclass
class DualEvaluation:
    lam: np.ndarray
    dual_value: float
    operational_value: float
    electricity_bound: float
    consumption: np.ndarray
    supply: np.ndarray
    vf: ValueFunctionO
    sddp: SddpResult

    @property
    def grad(self) -> np.ndarray:
        return self.consumption - self.supply


def evaluate_multiplier(lam, plant: PlantSpec, noise: NoiseModel, grids: OperationalGrids,
                        sddp_iters: int = 60, mc_paths: int = 2300, seed: int = 0) -> DualEvaluation:
    lam = np.asarray(lam, dtype=float)
    vf = solve_operational(lam, plant, noise, grids)
    consumption = forward_law(vf, plant, noise).consumption
    res = sddp_solve(lam, plant, noise, iters=sddp_iters, seed=derive_seed(seed, 0))
    supply, _ = simulate_allocation(res.cuts, lam, plant, noise, n_paths=mc_paths, seed=derive_seed(seed, 1))
    vo = initial_value(vf, plant)
    return DualEvaluation(lam.copy(), vo + res.lower_bound, vo, res.lower_bound, consumption, supply, vf, res)


def gradient_like(lam, plant: PlantSpec, noise: NoiseModel, grids: OperationalGrids, sddp_iters: int = 60,
                  mc_paths: int = 2300, seed: int = 0):
    """(expected consumption minus expected supply per hour, dual lower bound)."""
    ev = evaluate_multiplier(lam, plant, noise, grids, sddp_iters, mc_paths, seed)
    return ev.grad, ev.dual_value


@dataclass
class AscentRow:
    iteration: int
    dual_value: float
    grad_norm: float
    step: float
    wall_time: float
    policy_mean: float = float("nan")
    policy_ci: float = float("nan")
    subsidy_rate: float = float("nan")
    gap_rel: float = float("nan")


@dataclass
class AscentReport:
    rows: List[AscentRow] = field(default_factory=list)
    lams: List[np.ndarray] = field(default_factory=list)
    best_lam: Optional[np.ndarray] = None
    best_dual: float = -np.inf
    best_iteration: int = -1
    best_policy: float = np.inf
    best_policy_iteration: int = -1
    final_evaluation: Optional[PolicyEvaluation] = None
    best_evaluation: Optional[DualEvaluation] = None

    def record(self, row: AscentRow, lam: np.ndarray) -> None:
        self.rows.append(row)
        self.lams.append(lam.copy())
        if row.dual_value > self.best_dual:
            self.best_dual = row.dual_value
            self.best_lam = lam.copy()
            self.best_iteration = row.iteration

    def gap(self, c_subsidy: float = 0.0):
        return gap_report(self.best_dual, self.best_policy, c_subsidy)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "dual_value", "grad_norm", "step", "wall_time_s", "policy_mean",
                        "policy_ci", "subsidy_rate", "gap_rel"])
            for r in self.rows:
                w.writerow([r.iteration, repr(r.dual_value), repr(r.grad_norm), repr(r.step),
                            f"{r.wall_time:.3f}", repr(r.policy_mean), repr(r.policy_ci),
                            repr(r.subsidy_rate), repr(r.gap_rel)])


def ascend(plant: PlantSpec, noise: NoiseModel, grids: OperationalGrids, schedule: Schedule = Schedule(),
           seed: int = 0, lam0=None, log: Optional[Callable[[str], None]] = None):
    """Gradient-like ascent; returns the best multiplier and the per-iteration report.

    The policy is evaluated at iterations that are multiples of ``eval_every`` and
    always at the last one, which uses ``final_paths`` paths.
    """
    lam = init_multiplier(plant).lam if lam0 is None else np.asarray(lam0, dtype=float).copy()
    report = AscentReport()
    K = schedule.iterations
    for k in range(K + 1):
        t0 = time.perf_counter()
        ev = evaluate_multiplier(lam, plant, noise, grids, schedule.sddp_iters, schedule.mc_paths,
                                 derive_seed(seed, k))
        grad = ev.grad
        step = schedule.step_at(k) if k < K else 0.0
        row = AscentRow(k, ev.dual_value, float(np.linalg.norm(grad)), step, 0.0)
        last = k == K
        n_eval = schedule.final_paths if last else schedule.eval_paths
        due = last or (schedule.eval_every > 0 and k % schedule.eval_every == 0)
        if due and n_eval > 0:
            ctx = PolicyContext(ev.vf, ev.sddp.cuts, lam, plant, noise, n_ppa=schedule.n_ppa)
            pe = simulate_policy(ctx, n_eval, derive_seed(seed, k, 2))
            row.policy_mean, row.policy_ci, row.subsidy_rate = pe.mean_cost_k, pe.ci_k, pe.subsidy_rate
            if pe.mean_cost_k < report.best_policy:
                report.best_policy = pe.mean_cost_k
                report.best_policy_iteration = k
            if last:
                report.final_evaluation = pe
        row.wall_time = time.perf_counter() - t0
        if ev.dual_value > report.best_dual:
            report.best_evaluation = ev
        report.record(row, lam)
        if np.isfinite(report.best_policy):
            row.gap_rel = report.gap().gap_rel
        if log is not None:
            log(f"iter {k:3d} dual {row.dual_value:.2f} |grad| {row.grad_norm:.1f} "
                f"policy {row.policy_mean:.2f} granted {row.subsidy_rate:.3f} ({row.wall_time:.1f}s)")
        if not last:
            lam = lam + step * grad
    return Multiplier(report.best_lam, report.best_iteration, schedule.step_at(report.best_iteration)), report
