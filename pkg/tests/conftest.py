import math

import pytest

from saimc.radiosity import build_sai_tables, surface_adjoint
from saimc.scenarios import preset

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def flat():
    return preset("flat", 0.05)


@pytest.fixture(scope="session")
def cos3():
    return preset("cos3", 0.05)


@pytest.fixture(scope="session")
def circle():
    return preset("circle", 0.05)


@pytest.fixture(scope="session")
def flat_tables(flat):
    return build_sai_tables(surface_adjoint(flat))


@pytest.fixture(scope="session")
def cos3_tables(cos3):
    return build_sai_tables(surface_adjoint(cos3))


@pytest.fixture(scope="session")
def cos3_void():
    return preset("cos3", 0.05, math.inf)
