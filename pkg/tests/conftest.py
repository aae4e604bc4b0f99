import numpy as np
import pytest

from hardylab.geometry import build_configuration


@pytest.fixture
def two_poles():
    return build_configuration([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])


@pytest.fixture
def one_pole():
    return build_configuration([[0.0, 0.0, 0.0]], default_r0=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
