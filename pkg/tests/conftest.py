import numpy as np
import pytest

from nucav import io
from nucav.domain import load_stack

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def eit_stack():
    return load_stack("eit_cavity")


@pytest.fixture(scope="session")
def non_eit_stack():
    return load_stack("non_eit_cavity")


@pytest.fixture(scope="session")
def eit_params():
    return io.load_params("eit_params")


@pytest.fixture(scope="session")
def non_eit_params():
    return io.load_params("non_eit_params")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
