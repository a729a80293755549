import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ermtree", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ermtree")


@pytest.fixture
def four_points():
    return np.array([0.1, 0.2, 0.8, 0.9])
