"""Stagewise-independent finite noise model for hourly demand and PV energy."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

DEFAULT_FACTORS = (0.8, 0.9, 1.0, 1.1, 1.2)
DEFAULT_PROBS = (0.2, 0.2, 0.2, 0.2, 0.2)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteDistribution:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)
        if v.ndim != 1 or v.shape != p.shape or len(v) == 0:
            raise ScenarioError("values and probs must be nonempty vectors of equal length")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ScenarioError("outcomes must be finite and nonnegative")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ScenarioError(f"probabilities must be nonnegative and sum to 1 (sum={p.sum()})")

    def mean(self) -> float:
        return float(self.values @ self.probs)


@dataclass(frozen=True)
class StageDistribution:
    """Demand (kg) and PV (kWh) marginals of one hour, drawn independently."""

    demand: DiscreteDistribution
    pv: DiscreteDistribution


@dataclass(frozen=True)
class NoiseModel:
    stages: tuple
    independent: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.independent:
            raise ScenarioError("only stagewise independent noise is supported")

    @property
    def horizon(self) -> int:
        return len(self.stages)

    @property
    def pv_max(self) -> float:
        return max(float(st.pv.values.max()) for st in self.stages)

    @property
    def is_deterministic(self) -> bool:
        return all(
            np.count_nonzero(st.demand.probs) == 1 and np.count_nonzero(st.pv.probs) == 1
            for st in self.stages
        )


@dataclass(frozen=True)
class Profiles:
    """Hourly mean PV, mean demand and grid price."""

    mu_pv: np.ndarray
    mu_d: np.ndarray
    c_grid: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.c_grid)


def build_scaled_distribution(mu: float, factors=DEFAULT_FACTORS, probs=DEFAULT_PROBS) -> DiscreteDistribution:
    """Outcomes ``factor * mu`` with the given weights."""
    if mu < 0:
        raise ScenarioError(f"mean must be nonnegative, got {mu}")
    factors = np.asarray(factors, dtype=float)
    if factors.shape != np.shape(probs):
        raise ScenarioError("factors and probs must have the same length")
    return DiscreteDistribution(factors * mu, np.asarray(probs, dtype=float))


def build_noise_model(profiles: Profiles, factors=DEFAULT_FACTORS, probs=DEFAULT_PROBS) -> NoiseModel:
    stages = [
        StageDistribution(
            demand=build_scaled_distribution(d, factors, probs),
            pv=build_scaled_distribution(v, factors, probs),
        )
        for d, v in zip(profiles.mu_d, profiles.mu_pv)
    ]
    return NoiseModel(tuple(stages))


def deterministic_model(demand: Sequence[float], pv: Sequence[float]) -> NoiseModel:
    return NoiseModel(tuple(
        StageDistribution(DiscreteDistribution([d], [1.0]), DiscreteDistribution([v], [1.0]))
        for d, v in zip(demand, pv)
    ))


def support(model: NoiseModel, h: int) -> StageDistribution:
    if not 0 <= h < model.horizon:
        raise ScenarioError(f"hour {h} outside [0, {model.horizon})")
    return model.stages[h]


def joint_support(model: NoiseModel, h: int):
    """Product support of (demand, pv) at hour h: (demand, pv, prob) arrays."""
    st = support(model, h)
    d, v = np.meshgrid(st.demand.values, st.pv.values, indexing="ij")
    p = np.outer(st.demand.probs, st.pv.probs)
    return d.ravel(), v.ravel(), p.ravel()


def _draw(rng: np.random.Generator, dist: DiscreteDistribution, n: int) -> np.ndarray:
    idx = np.searchsorted(np.cumsum(dist.probs), rng.random(n), side="right")
    return np.minimum(idx, len(dist.values) - 1)


def sample_indices(model: NoiseModel, n_paths: int, seed: int):
    """Outcome indices (n_paths, T) for demand and PV."""
    rng = np.random.default_rng(seed)
    T = model.horizon
    di = np.empty((n_paths, T), dtype=np.int64)
    vi = np.empty((n_paths, T), dtype=np.int64)
    for h, st in enumerate(model.stages):
        di[:, h] = _draw(rng, st.demand, n_paths)
        vi[:, h] = _draw(rng, st.pv, n_paths)
    return di, vi


def sample_paths(model: NoiseModel, n_paths: int, seed: int):
    """Demand and PV values, each of shape (n_paths, T)."""
    di, vi = sample_indices(model, n_paths, seed)
    demand = np.empty(di.shape)
    pv = np.empty(vi.shape)
    for h, st in enumerate(model.stages):
        demand[:, h] = st.demand.values[di[:, h]]
        pv[:, h] = st.pv.values[vi[:, h]]
    return demand, pv


def sample_path(model: NoiseModel, seed: int):
    demand, pv = sample_paths(model, 1, seed)
    return demand[0], pv[0]


def load_profiles(path=None) -> Profiles:
    """Read an hourly profile CSV (hour, mu_pv_kwh, mu_d_kg, c_grid_eur_per_kwh)."""
    if path is None:
        handle = resources.files("h2price").joinpath("data/profiles_168h.csv").open("r")
    else:
        handle = open(path, "r", newline="")
    with handle as fh:
        rows = list(csv.DictReader(fh))
    required = {"hour", "mu_pv_kwh", "mu_d_kg", "c_grid_eur_per_kwh"}
    if not rows or not required <= set(rows[0]):
        raise ScenarioError(f"profile file needs columns {sorted(required)}")
    rows.sort(key=lambda r: int(r["hour"]))
    hours = [int(r["hour"]) for r in rows]
    if hours != list(range(len(rows))):
        raise ScenarioError("profile hours must be 0..T-1 without gaps")
    return Profiles(
        mu_pv=np.array([float(r["mu_pv_kwh"]) for r in rows]),
        mu_d=np.array([float(r["mu_d_kg"]) for r in rows]),
        c_grid=np.array([float(r["c_grid_eur_per_kwh"]) for r in rows]),
    )


def write_profiles(profiles: Profiles, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "mu_pv_kwh", "mu_d_kg", "c_grid_eur_per_kwh"])
        for h in range(profiles.horizon):
            w.writerow([h, repr(float(profiles.mu_pv[h])), repr(float(profiles.mu_d[h])),
                        repr(float(profiles.c_grid[h]))])
