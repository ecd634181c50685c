import os

import pytest
from hypothesis import HealthCheck, settings

from nsystem.model import make_params, scale_system

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def P0():
    return make_params(1, 2, 1, 1, 0.5, 1, 1)


@pytest.fixture(scope="session")
def P_equal():
    return make_params(1, 1, 1, 1, 1, 1, 1)


@pytest.fixture(scope="session")
def sys100(P0):
    return scale_system(P0, 100)


@pytest.fixture(scope="session")
def sys25(P0):
    return scale_system(P0, 25)


@pytest.fixture(scope="session")
def sys400(P0):
    return scale_system(P0, 400)
