import numpy as np
import pytest
from hypothesis import settings

from strata.population import Gaussian, PopulationSpec, ShiftedExponential, UniformBox

settings.register_profile("strata", deadline=None, max_examples=60)
settings.load_profile("strata")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def bivariate_spec():
    return PopulationSpec(
        [0.5, 0.5],
        [
            Gaussian([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]]),
            Gaussian([1.0, -1.0], [[2.0, -0.5], [-0.5, 1.5]]),
        ],
    )


@pytest.fixture
def mixed_spec():
    return PopulationSpec(
        [0.2, 0.3, 0.5],
        [
            Gaussian([1.0], [[2.0]]),
            UniformBox([-1.0], [3.0]),
            ShiftedExponential(rate=2.0, offset=-1.0),
        ],
    )
