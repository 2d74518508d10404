import numpy as np
import pytest

from helpers import ACCEPTANCE_LINES, SMALL_ENV, SMALL_FEATURES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_features():
    return SMALL_FEATURES


@pytest.fixture
def small_env():
    return SMALL_ENV
