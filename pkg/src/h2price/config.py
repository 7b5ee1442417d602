"""Run configuration: a YAML tree with units in the key names."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from .ascent import Schedule
from .model import DEFAULT_MU, ElectrolyserSpec, Mode, PlantSpec, load_phi_curve, ModelError
from .scenario import DEFAULT_FACTORS, DEFAULT_PROBS, build_noise_model, deterministic_model, \
    load_profiles
from .sdp import build_grids

MODES = ("solve", "simulate", "oracle", "report")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class PlantConfig:
    m_max_kg_per_h: float = 23.0
    e_idle_kwh: float = 3.0
    l_min: float = 0.1
    e_comp_kwh_per_kg: float = 6.0
    s_min_kg: float = 25.0
    s_max_kg: float = 750.0
    s0_kg: float = 250.0
    m0: str = "COLD"
    ppa_cap_kwh: float = 41650.0
    c_ppa_eur_per_kwh: float = 0.075
    c_backup_eur_per_kg: float = 5000.0
    c_subsidy_eur: float = 5e6
    p: float = 0.2
    beta1_eur_per_kwh: float = 0.0
    beta2_eur_per_kwh: float = 26.5
    mu: Optional[List[List[float]]] = None


@dataclass
class NoiseConfig:
    factors: List[float] = field(default_factory=lambda: list(DEFAULT_FACTORS))
    probs: List[float] = field(default_factory=lambda: list(DEFAULT_PROBS))
    deterministic: bool = False


@dataclass
class GridConfig:
    n_stock: int = 300
    n_load: int = 30
    n_out: int = 7
    n_ppa: int = 30


@dataclass
class ScheduleConfig:
    iterations: int = 51
    step_eur_per_kwh2: float = 5e-6
    halving_period: int = 15
    sddp_iterations: int = 60
    gradient_paths: int = 2300
    eval_every: int = 5
    eval_paths: int = 5000
    final_paths: int = 5000

    def to_schedule(self, n_ppa: int) -> Schedule:
        return Schedule(self.iterations, self.step_eur_per_kwh2, self.halving_period, self.sddp_iterations,
                        self.gradient_paths, self.eval_every, self.eval_paths, self.final_paths, n_ppa)


@dataclass
class TinyConfig:
    kind: str = "two"
    horizon: int = 3
    n_ppa: int = 4
    random_multipliers: int = 20
    sddp_iterations: int = 50


@dataclass
class SimulateConfig:
    paths: int = 5000
    trajectories: int = 20


@dataclass
class RunConfig:
    name: str = "default"
    mode: str = "solve"
    seed: int = 0
    output_dir: str = "out/default"
    profiles_csv: Optional[str] = None
    phi_curve_csv: Optional[str] = None
    plant: PlantConfig = field(default_factory=PlantConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    grids: GridConfig = field(default_factory=GridConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    tiny: Optional[TinyConfig] = None
    base_dir: str = field(default=".", compare=False, repr=False)

    # --- construction -------------------------------------------------------------------

    def resolve(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    @property
    def out(self) -> Path:
        # outputs are relative to the working directory, inputs to the config file
        return Path(self.output_dir)

    def build_plant(self, c_grid) -> PlantSpec:
        pc = self.plant
        if self.phi_curve_csv is None:
            loads, kwh = load_phi_curve()
        else:
            loads, kwh = load_phi_curve(self.resolve(self.phi_curve_csv))
        mu = DEFAULT_MU if pc.mu is None else np.asarray(pc.mu, dtype=float)
        try:
            el = ElectrolyserSpec(loads, kwh, pc.m_max_kg_per_h, pc.e_idle_kwh, pc.l_min, mu)
            return PlantSpec(el, np.asarray(c_grid, dtype=float), pc.e_comp_kwh_per_kg, pc.s_min_kg, pc.s_max_kg,
                             pc.ppa_cap_kwh, pc.c_ppa_eur_per_kwh, pc.c_backup_eur_per_kg, pc.c_subsidy_eur,
                             pc.p, pc.beta1_eur_per_kwh, pc.beta2_eur_per_kwh, pc.s0_kg, Mode[pc.m0])
        except ModelError as exc:
            raise ConfigError("plant", str(exc)) from exc

    def build(self):
        """(plant, noise, grids) for the full-scale pipeline."""
        if self.tiny is not None:
            from .oracle import tiny_instance

            inst = tiny_instance(self.tiny.kind, self.tiny.horizon, self.tiny.n_ppa)
            return inst.plant, inst.noise, inst.grids
        path = self.resolve(self.profiles_csv)
        if path is not None and not path.exists():
            raise ConfigError("profiles_csv", f"file not found: {path}")
        prof = load_profiles(path)
        plant = self.build_plant(prof.c_grid)
        if self.noise.deterministic:
            noise = deterministic_model(prof.mu_d, prof.mu_pv)
        else:
            noise = build_noise_model(prof, self.noise.factors, self.noise.probs)
        g = self.grids
        return plant, noise, build_grids(plant, noise, g.n_stock, g.n_load, g.n_out)

    # --- serialization ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        if d["tiny"] is None:
            d.pop("tiny")
        return d

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


_SECTIONS = {"plant": PlantConfig, "noise": NoiseConfig, "grids": GridConfig, "schedule": ScheduleConfig,
             "simulate": SimulateConfig, "tiny": TinyConfig}


def _coerce(path: str, value, kind):
    if kind in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if not np.isfinite(value):
            raise ConfigError(path, "must be finite")
        return float(value)
    if kind in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true or false, got {value!r}")
        return value
    if kind in (str, "str"):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def _section(path: str, cls, raw):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    kwargs = {}
    for k, v in raw.items():
        t = known[k].type
        sub = f"{path}.{k}"
        if v is None:
            kwargs[k] = None
        elif t in ("List[float]", "Optional[List[List[float]]]"):
            if not isinstance(v, list):
                raise ConfigError(sub, "expected a list")
            if t == "List[float]":
                kwargs[k] = [_coerce(f"{sub}[{i}]", x, float) for i, x in enumerate(v)]
            else:
                kwargs[k] = [[_coerce(f"{sub}[{i}][{j}]", x, float) for j, x in enumerate(row)]
                             for i, row in enumerate(v)]
        else:
            kwargs[k] = _coerce(sub, v, t)
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}")
    if cfg.plant.m0 not in Mode.__members__:
        raise ConfigError("plant.m0", f"must be one of {list(Mode.__members__)}")
    g = cfg.grids
    for name, low in (("n_stock", 2), ("n_load", 1), ("n_out", 1), ("n_ppa", 1)):
        if getattr(g, name) < low:
            raise ConfigError(f"grids.{name}", f"must be at least {low}")
    s = cfg.schedule
    for name in ("iterations", "eval_every", "eval_paths", "final_paths"):
        if getattr(s, name) < 0:
            raise ConfigError(f"schedule.{name}", "must be nonnegative")
    for name in ("halving_period", "sddp_iterations", "gradient_paths"):
        if getattr(s, name) < 1:
            raise ConfigError(f"schedule.{name}", "must be positive")
    if s.step_eur_per_kwh2 < 0:
        raise ConfigError("schedule.step_eur_per_kwh2", "must be nonnegative")
    n = cfg.noise
    if len(n.factors) != len(n.probs) or not n.factors:
        raise ConfigError("noise.probs", "needs one probability per factor")
    if any(p < 0 for p in n.probs) or abs(sum(n.probs) - 1) > 1e-9:
        raise ConfigError("noise.probs", "must be nonnegative and sum to 1")
    if any(f < 0 for f in n.factors):
        raise ConfigError("noise.factors", "must be nonnegative")
    if cfg.simulate.paths < 1:
        raise ConfigError("simulate.paths", "must be at least 1")
    if cfg.simulate.trajectories < 0:
        raise ConfigError("simulate.trajectories", "must be nonnegative")
    if cfg.tiny is not None:
        t = cfg.tiny
        if t.kind not in ("deterministic", "two", "three"):
            raise ConfigError("tiny.kind", "must be deterministic, two or three")
        if not 1 <= t.horizon <= 4:
            raise ConfigError("tiny.horizon", "must lie in 1..4")
        if t.n_ppa < 1 or t.random_multipliers < 0 or t.sddp_iterations < 1:
            raise ConfigError("tiny", "n_ppa and sddp_iterations must be positive")
    if cfg.plant.mu is not None and np.shape(cfg.plant.mu) != (3, 3):
        raise ConfigError("plant.mu", "must be a 3x3 table")


def from_dict(raw: Dict[str, Any], base_dir=".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    raw = copy.deepcopy(raw)
    top = {f.name: f for f in fields(RunConfig)}
    unknown = set(raw) - set(top) - {"base_dir"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    kwargs: Dict[str, Any] = {}
    for k, v in raw.items():
        if k in _SECTIONS:
            kwargs[k] = None if (k == "tiny" and v is None) else _section(k, _SECTIONS[k], v)
        elif k in ("profiles_csv", "phi_curve_csv"):
            kwargs[k] = None if v is None else _coerce(k, v, str)
        elif k == "seed":
            kwargs[k] = _coerce(k, v, int)
        elif k in ("name", "mode", "output_dir"):
            kwargs[k] = _coerce(k, v, str)
    cfg = RunConfig(**kwargs, base_dir=str(base_dir))
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML: {exc}") from exc
    return from_dict(raw or {}, base_dir=path.parent)


def bundled_config(name: str) -> Path:
    from importlib import resources

    p = resources.files("h2price").joinpath(f"data/{name}.yaml")
    return Path(str(p))
