import numpy as np
import pytest

from fpoc.mdp import TaskMode, build_mdp, four_room


@pytest.fixture(scope="session")
def grid():
    return four_room()


@pytest.fixture(scope="session")
def train_mdp(grid):
    return build_mdp(grid, TaskMode.TRAIN)


@pytest.fixture(scope="session")
def test_mdp(grid):
    return build_mdp(grid, TaskMode.TEST)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
