import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mhdlab.geometry import FlowMapState, compute_geometry  # noqa: E402
from mhdlab.mesh import build_ball_mesh  # noqa: E402


@pytest.fixture(scope="session")
def mesh2():
    return build_ball_mesh(2, 2, 6)


@pytest.fixture(scope="session")
def cache2(mesh2):
    return compute_geometry(FlowMapState(mesh2, mesh2.y.copy()))


@pytest.fixture(scope="session")
def mesh3():
    return build_ball_mesh(3, 1, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
