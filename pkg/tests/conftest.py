import numpy as np
import pytest

from bregbox.bregman import ProblemInstance
from bregbox.constraints import BoxConstraints
from bregbox.operator import Grid, GridFunction, dense_operator
from bregbox.problems import standard


@pytest.fixture
def t1():
    """S = I on three unit-weight nodes, z = (2, 0.5, -3), box [-1, 1]."""
    g = Grid.unit(3)
    op = dense_operator(np.eye(3))
    z = GridFunction(g, [2.0, 0.5, -3.0])
    return ProblemInstance(op, z, BoxConstraints.constant(g, -1.0, 1.0), name="t1")


_BENCH = {}


@pytest.fixture(scope="session")
def bench():
    def get(name):
        if name not in _BENCH:
            _BENCH[name] = standard(name)
        return _BENCH[name]
    return get


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Collects ``PASS/FAIL`` lines printed after the run by the terminal summary."""
    return request.config.stash[_ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1][1:].rstrip(":"))):
            terminalreporter.write_line(line)
