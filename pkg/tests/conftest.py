import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from machlimit.fields import BackgroundDeformation, EquationOfState, Grid

settings.register_profile(
    "machlimit", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("machlimit")


@pytest.fixture
def grid32():
    return Grid(n1=32, n3=32)


@pytest.fixture
def eos():
    return EquationOfState(1.4)


@pytest.fixture
def fbar():
    return BackgroundDeformation.default(2)


def observed_order(errors, ns):
    return float(-np.polyfit(np.log(ns), np.log(errors), 1)[0])
