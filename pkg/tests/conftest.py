import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roughlab.geometry import MeshParams, ProblemConfig
from roughlab.meshing import build_cylinder_mesh, build_rough_mesh

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def coarse_cfg():
    return ProblemConfig(epsilon=0.2, h="sine", mesh=MeshParams(edge=1 / 16))


@pytest.fixture(scope="session")
def coarse_rough(coarse_cfg):
    return build_rough_mesh(coarse_cfg)


@pytest.fixture(scope="session")
def cyl8():
    return build_cylinder_mesh(8)
