import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcqc.instances import grid_points, jittered_grid
from pcqc.pointcloud import PointCloud

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid17():
    return PointCloud(grid_points(17))


@pytest.fixture(scope="session")
def jitter17():
    return PointCloud(jittered_grid(17, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
