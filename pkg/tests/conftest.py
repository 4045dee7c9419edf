import numpy as np
import pytest

from robsparse import simlab

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def low_dim():
    return simlab.build_sigma("low_dim")


@pytest.fixture(scope="session")
def high_dim():
    return simlab.build_sigma("high_dim")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pd(rng, dim, n=None):
    z = rng.standard_normal((dim, n or 3 * dim))
    return z @ z.T / z.shape[1]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
