import numpy as np
import pytest

from nonlocal_lab.field import Grid
from nonlocal_lab.model import ModelParams

from _acceptance_log import ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def params_half():
    return ModelParams(1, 0.5, 1.0)


@pytest.fixture
def grid_1d():
    return Grid((-2.0,), (32,), 0.125, 0.001, 0.0, 0.05)


@pytest.fixture
def grid_2d():
    return Grid((-1.0, -1.0), (8, 8), 0.25, 0.001, 0.0, 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
