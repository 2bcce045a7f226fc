import numpy as np
import pytest
from hypothesis import settings

from capa_crb.fisher import CrbProblem, scenario_grids
from capa_crb.geometry import scenario_from_table1

settings.register_profile("capa", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("capa")


@pytest.fixture(scope="session")
def table1():
    return scenario_from_table1()


@pytest.fixture(scope="session")
def single_target(table1):
    return table1.with_targets(table1.targets[:1])


@pytest.fixture(scope="session")
def problem80(table1):
    return CrbProblem(table1, *scenario_grids(table1, 80))


@pytest.fixture(scope="session")
def problem80_single(single_target):
    return CrbProblem(single_target, *scenario_grids(single_target, 80))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
