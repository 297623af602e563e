import warnings

import numpy as np
import pytest

from harrisflow.covariance import build_exact, build_mollified

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def exact_spec():
    return build_exact(1.0, 1.0)


@pytest.fixture(scope="session")
def moll_spec():
    return build_mollified(1.0, 1.0, 0.2)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240517)
