"""Plant physics, dynamics and cost functions of the hydrogen production site.

Units throughout: energies in kWh, masses in kg, money in EUR, time in
integer hours. Every function here is pure.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources
from typing import Optional, Sequence

import numpy as np


class ModelError(ValueError):
    """Base class for invalid inputs to the plant model."""


class ConstraintViolation(ModelError):
    """A control is incompatible with the load/mode coupling."""


class InfeasibleControl(ModelError):
    """A control drives a state outside its admissible set."""


class ConfigurationError(ModelError):
    """Plant parameters violate a structural requirement."""


class Mode(IntEnum):
    COLD = 0
    IDLE = 1
    START = 2


# Fraction of the hour left for production after a transition (row: previous
# mode, column: commanded mode).
DEFAULT_MU = np.array(
    [
        [1.0, 5.0 / 6.0, 99.0 / 120.0],
        [119.0 / 120.0, 1.0, 299.0 / 300.0],
        [119.0 / 120.0, 119.0 / 120.0, 1.0],
    ]
)

TOL = 1e-9


def load_phi_curve(path=None) -> tuple[np.ndarray, np.ndarray]:
    """Read a (load, kWh/kg) table. Defaults to the bundled curve."""
    if path is None:
        handle = resources.files("h2price").joinpath("data/phi_e.csv").open("r")
    else:
        handle = open(path, "r", newline="")
    with handle as fh:
        rows = list(csv.DictReader(fh))
    loads = np.array([float(r["load"]) for r in rows])
    kwh = np.array([float(r["kwh_per_kg"]) for r in rows])
    return loads, kwh


@dataclass(frozen=True)
class ElectrolyserSpec:
    phi_load: np.ndarray
    phi_kwh_per_kg: np.ndarray
    m_max: float = 23.0
    e_idle: float = 3.0
    l_min: float = 0.1
    mu: np.ndarray = field(default_factory=lambda: DEFAULT_MU.copy())

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "phi_load", np.asarray(self.phi_load, dtype=float))
        object.__setattr__(self, "phi_kwh_per_kg", np.asarray(self.phi_kwh_per_kg, dtype=float))
        if mu.shape != (3, 3):
            raise ConfigurationError("mu must be a 3x3 table")
        if np.any(mu < 0) or np.any(mu > 1):
            raise ConfigurationError("mu entries must lie in [0, 1]")
        if not np.allclose(np.diag(mu), 1.0):
            raise ConfigurationError("mu diagonal must equal 1")
        if not self.m_max > 0:
            raise ConfigurationError("m_max must be positive")
        if not 0 < self.l_min <= 1:
            raise ConfigurationError("l_min must lie in (0, 1]")
        if self.e_idle < 0:
            raise ConfigurationError("e_idle must be nonnegative")
        x = self.phi_load
        if x.ndim != 1 or len(x) < 1 or len(x) != len(self.phi_kwh_per_kg):
            raise ConfigurationError("phi curve needs matching load and kWh/kg columns")
        if np.any(np.diff(x) <= 0):
            raise ConfigurationError("phi curve loads must be strictly increasing")
        if x[0] > self.l_min + TOL or x[-1] < 1 - TOL:
            raise ConfigurationError(
                f"phi curve must cover [{self.l_min}, 1], got [{x[0]}, {x[-1]}]"
            )
        if not np.all(np.isfinite(self.phi_kwh_per_kg)) or np.any(self.phi_kwh_per_kg < 0):
            raise ConfigurationError("phi curve values must be finite and nonnegative")

    def phi(self, load):
        """Unitary electricity consumption (kWh/kg) at the given load."""
        return np.interp(load, self.phi_load, self.phi_kwh_per_kg)


@dataclass(frozen=True)
class PlantSpec:
    electrolyser: ElectrolyserSpec
    c_grid: np.ndarray
    e_comp: float = 6.0
    s_min: float = 25.0
    s_max: float = 750.0
    ppa_cap: float = 41650.0
    c_ppa: float = 0.075
    c_backup: float = 5000.0
    c_subsidy: float = 5e6
    p: float = 0.2
    beta1: float = 0.0
    beta2: float = 26.5
    s0: float = 250.0
    m0: Mode = Mode.COLD

    def __post_init__(self):
        object.__setattr__(self, "c_grid", np.asarray(self.c_grid, dtype=float))
        object.__setattr__(self, "m0", Mode(self.m0))
        if not 0 <= self.s_min < self.s_max:
            raise ConfigurationError("need 0 <= s_min < s_max")
        if not 0 <= self.p < 1:
            raise ConfigurationError("p must lie in [0, 1)")
        if self.ppa_cap < 0:
            raise ConfigurationError("ppa_cap must be nonnegative")
        if self.c_grid.ndim != 1 or len(self.c_grid) < 1:
            raise ConfigurationError("c_grid must be a nonempty vector")
        if self.e_comp < 0:
            raise ConfigurationError("e_comp must be nonnegative")
        if not self.s_min - TOL <= self.s0 <= self.s_max + TOL:
            raise ConfigurationError("initial stock outside storage bounds")
        check_betas(self.beta1, self.beta2, self.c_subsidy, self.q_max)

    @property
    def horizon(self) -> int:
        return len(self.c_grid)

    @property
    def e_max(self) -> float:
        return max_consumption(self)

    @property
    def q_max(self) -> float:
        return self.horizon * (1 - self.p) * self.e_max

    @property
    def q_min(self) -> float:
        return -self.horizon * self.p * self.e_max

    def with_horizon(self, c_grid) -> "PlantSpec":
        from dataclasses import replace

        return replace(self, c_grid=np.asarray(c_grid, dtype=float))


@dataclass(frozen=True)
class State:
    s: float
    m: Mode
    p_stock: float
    q: float


@dataclass(frozen=True)
class Control:
    e_ppa: float
    e_grid: float
    load: float
    mode_cmd: Mode
    h_out: float


def max_consumption(spec: PlantSpec) -> float:
    el = spec.electrolyser
    return float((el.phi(1.0) + spec.e_comp) * el.m_max)


def check_load(load: float, mode_cmd: Mode, spec: PlantSpec) -> None:
    if mode_cmd == Mode.START:
        if not spec.electrolyser.l_min - TOL <= load <= 1 + TOL:
            raise ConstraintViolation(
                f"load {load} outside [{spec.electrolyser.l_min}, 1] in START"
            )
    elif abs(load) > TOL:
        raise ConstraintViolation(f"load must be 0 in {Mode(mode_cmd).name}, got {load}")


def hydrogen_production(load: float, m_prev: Mode, mode_cmd: Mode, spec: PlantSpec) -> float:
    check_load(load, mode_cmd, spec)
    el = spec.electrolyser
    return float(load * el.mu[m_prev, mode_cmd] * el.m_max)


def electrolyser_energy(load: float, m_prev: Mode, mode_cmd: Mode, spec: PlantSpec) -> float:
    h_prod = hydrogen_production(load, m_prev, mode_cmd, spec)
    el = spec.electrolyser
    energy = 0.0
    if mode_cmd == Mode.START:
        energy = float(el.phi(load)) * h_prod
    elif mode_cmd == Mode.IDLE:
        energy = el.e_idle * el.mu[m_prev, mode_cmd]
    return float(energy)


def compressor_energy(h_prod: float, spec: PlantSpec) -> float:
    if h_prod < 0:
        raise ModelError("hydrogen production must be nonnegative")
    return float(spec.e_comp * h_prod)


def consumption(load: float, m_prev: Mode, mode_cmd: Mode, spec: PlantSpec) -> float:
    """Electrolyser plus compressor draw for one hour."""
    h_prod = hydrogen_production(load, m_prev, mode_cmd, spec)
    return electrolyser_energy(load, m_prev, mode_cmd, spec) + compressor_energy(h_prod, spec)


def step_stock(s: float, h_prod: float, demand: float, h_out: float) -> float:
    """Next stock; unused extraction is re-injected. Bounds are checked by the caller."""
    return s + h_prod - min(demand, h_out)


def stock_in_bounds(s: float, spec: PlantSpec, tol: float = TOL) -> bool:
    return spec.s_min - tol <= s <= spec.s_max + tol


def step_cumulative(q: float, e_grid: float, e_ppa: float, e_pv: float, spec: PlantSpec) -> float:
    return q + (1 - spec.p) * max(e_grid, 0.0) - spec.p * min(spec.e_max, e_ppa + e_pv)


def step_ppa(p_stock: float, e_ppa: float) -> float:
    if e_ppa < -TOL:
        raise InfeasibleControl(f"negative PPA draw {e_ppa}")
    if e_ppa > p_stock + TOL:
        raise InfeasibleControl(f"PPA draw {e_ppa} exceeds remaining stock {p_stock}")
    return p_stock - e_ppa


def stage_cost(e_ppa: float, e_grid: float, demand: float, h_out: float, h: int, spec: PlantSpec) -> float:
    return (
        spec.c_ppa * e_ppa
        + spec.c_grid[h] * max(e_grid, 0.0)
        + spec.c_backup * max(demand - h_out, 0.0)
    )


def subsidy_cost(q_T, c_subsidy: float = 5e6):
    """-c_subsidy when q_T <= 0 (boundary included), else 0."""
    out = np.where(np.asarray(q_T, dtype=float) <= 0, -c_subsidy, 0.0)
    return float(out) if out.ndim == 0 else out


def beta_upper_bound(c_subsidy: float, q_max: float) -> float:
    return c_subsidy / q_max


def check_betas(beta1: float, beta2: float, c_subsidy: float, q_max: float) -> None:
    bound = beta_upper_bound(c_subsidy, q_max)
    if not (0 <= beta1 < beta2 <= bound + 1e-12):
        raise ConfigurationError(
            f"need 0 <= beta1 < beta2 <= c_subsidy/Q_max = {bound:.6g}; "
            f"got beta1={beta1}, beta2={beta2}"
        )


def surrogate_final_cost(q_T, beta1: float, beta2: float, c_subsidy: float = 5e6,
                         q_max: Optional[float] = None):
    """Convex nondecreasing under-estimator of the subsidy cost.

    When ``q_max`` is given the slopes are validated against ``c_subsidy / q_max``.
    """
    if q_max is not None:
        check_betas(beta1, beta2, c_subsidy, q_max)
    q = np.asarray(q_T, dtype=float)
    out = np.maximum(beta1 * q, beta2 * q) - c_subsidy
    return float(out) if out.ndim == 0 else out


def control_consumption_table(spec: PlantSpec, loads: Sequence[float]):
    """Per (m_prev, control) production and consumption for a load grid.

    Controls are ordered COLD, IDLE, START x loads. Returns (modes, load_values,
    production[3, C], energy[3, C]).
    """
    loads = np.asarray(loads, dtype=float)
    modes = np.concatenate([[Mode.COLD, Mode.IDLE], np.full(len(loads), Mode.START)]).astype(int)
    lv = np.concatenate([[0.0, 0.0], loads])
    el = spec.electrolyser
    mu = el.mu[:, modes]  # (3, C)
    prod = lv[None, :] * mu * el.m_max
    energy = el.phi(lv)[None, :] * prod * (modes == Mode.START) + spec.e_comp * prod
    energy = energy + el.e_idle * mu * (modes == Mode.IDLE)
    return modes, lv, prod, energy
