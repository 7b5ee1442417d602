import numpy as np
import pytest

from h2price.model import ElectrolyserSpec, PlantSpec, load_phi_curve
from h2price.scenario import build_noise_model, load_profiles


@pytest.fixture(scope="session")
def profiles():
    return load_profiles()


@pytest.fixture(scope="session")
def plant(profiles):
    loads, kwh = load_phi_curve()
    return PlantSpec(ElectrolyserSpec(loads, kwh), profiles.c_grid)


@pytest.fixture(scope="session")
def noise(profiles):
    return build_noise_model(profiles)


def unit_plant(m_max=1.0, e_comp=0.0, phi1=1.0, horizon=1, **kw):
    el = ElectrolyserSpec(np.array([0.0, 1.0]), np.array([phi1, phi1]), m_max=m_max)
    return PlantSpec(el, np.full(horizon, 0.1), e_comp=e_comp, beta2=kw.pop("beta2", 1e-6), **kw)


ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} ({detail})")
