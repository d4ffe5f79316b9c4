import numpy as np
import pytest

from dipolerg.model import ModelParams


@pytest.fixture(scope="session")
def default_params():
    return ModelParams()


@pytest.fixture(scope="session")
def lam_c(default_params):
    """Empirical coupling window edge, shared by the slow comparison tests."""
    from dipolerg.firststep import lambda_critical_estimate
    return lambda_critical_estimate(default_params)


@pytest.fixture()
def rng():
    # fresh generator per test so the order of tests cannot matter
    return np.random.default_rng(20260823)
