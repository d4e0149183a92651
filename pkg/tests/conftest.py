import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from heatadapt.fem2d import assemble_fem, project_H1, project_L2, unit_square_mesh
from heatadapt.gelfand import DiscreteSystem

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_spd_system(rng, dim, backend="dense"):
    A = rng.standard_normal((dim, dim))
    K = A @ A.T + dim * np.eye(dim)
    B = rng.standard_normal((dim, dim))
    M = B @ B.T / dim + np.eye(dim)
    return DiscreteSystem(M, K, backend=backend)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def heat16():
    mesh = unit_square_mesh(16)
    system = assemble_fem(mesh)
    one = lambda x, y: np.ones_like(x)  # noqa: E731
    return mesh, system, project_L2(mesh, one, system), project_H1(mesh, one, system)


@pytest.fixture(scope="session")
def heat32():
    mesh = unit_square_mesh(32)
    system = assemble_fem(mesh)
    one = lambda x, y: np.ones_like(x)  # noqa: E731
    return mesh, system, project_L2(mesh, one, system), project_H1(mesh, one, system)
