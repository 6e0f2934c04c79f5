from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import pytest

from npitrigger.dynamics import ChileModel, ChileParams, ChileState, ChinaModel, ChinaState, CompartmentModel
from npitrigger.scenario import load_params, load_scenario

DATA = Path(__file__).parent / "data"
CHINA_PARAMS_FILE = DATA / "china_params_illustrative.yaml"

CHILE_X0 = ChileState(6671557, 1697, 1723, 2540, 421948, 1157, 433, 11753)
CHINA_X0 = ChinaState(1389828000, 14, 2, 1555, 2035, 270, 73622, 90346, 3708)

# (criterion, passed, detail) collected by tests/test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


class Scalar(NamedTuple):
    x: float


@dataclass(frozen=True)
class ScalarGrowthModel(CompartmentModel):
    """x(t+1) = (1 - u) * growth * x(t); not conservative."""

    growth: float = 2.0
    dh: float = 0.2

    name = "toy"
    state_type = Scalar

    @property
    def population(self) -> float:
        return 1.0

    @property
    def delta_hat(self) -> float:
        return self.dh

    def step(self, x, u):
        return Scalar((1.0 - u) * self.growth * x[0])


@pytest.fixture
def chile_model() -> ChileModel:
    return ChileModel()


@pytest.fixture
def supercritical_chile() -> ChileModel:
    # Transmission x4 so that policies actually switch back and forth.
    p = ChileParams()
    return ChileModel(replace(p, beta_E=4 * p.beta_E, beta_Im=4 * p.beta_Im, beta_I=4 * p.beta_I))


@pytest.fixture(scope="session")
def china_params() -> dict[str, float]:
    return load_params(CHINA_PARAMS_FILE)


@pytest.fixture(scope="session")
def chile_config():
    return load_scenario("chile")


@pytest.fixture(scope="session")
def china_config(china_params):
    return load_scenario("china", china_params)


@pytest.fixture
def china_model(china_config) -> ChinaModel:
    return china_config.build_model()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
