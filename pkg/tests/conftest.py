import warnings

import pytest

from ramanspin.engine import IntegratorConfig
from ramanspin.model import ConstantDephasing, EnergyLinearDephasing, RelaxationParams
from ramanspin.sequences import Setup

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def constant_setup():
    return Setup(relaxation=RelaxationParams(dephasing=ConstantDephasing(10.0)))


@pytest.fixture(scope="session")
def linear_setup():
    return Setup(relaxation=RelaxationParams(dephasing=EnergyLinearDephasing()))


@pytest.fixture(scope="session")
def coherent_setup():
    return Setup(relaxation=RelaxationParams.zero())


@pytest.fixture(scope="session")
def coarse_linear_setup():
    return Setup(
        relaxation=RelaxationParams(dephasing=EnergyLinearDephasing()),
        integrator=IntegratorConfig(dt_pulse_fs=10.0),
    )


@pytest.fixture(autouse=True)
def _quiet_adiabatic_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Rabi/detuning ratio")
        yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
