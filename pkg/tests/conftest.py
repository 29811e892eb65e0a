import numpy as np
import pytest

from symvolterra import chaos

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lorenz():
    return chaos.generate_trajectory("lorenz", 11000, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
