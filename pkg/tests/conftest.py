import numpy as np
import pytest

from fiberspec.field import CouplingParams, FieldDiscretization, Model

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_model(e=0.2, sigma=0.1, spin=False, n_max=2, radial="linear", shells=2,
               angular="axes6", per_decade=None, **grid):
    d = FieldDiscretization(radial, shells, angular, shells_per_decade=per_decade, **grid)
    return Model(d, CouplingParams(e, 1.0, sigma, spin), n_max)


@pytest.fixture(scope="session")
def weak_model():
    return make_model(e=0.2)


@pytest.fixture(scope="session")
def weak_spin_model():
    return make_model(e=0.2, spin=True)


@pytest.fixture(scope="session")
def free_model():
    return make_model(e=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
