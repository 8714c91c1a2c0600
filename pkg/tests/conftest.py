import numpy as np
import pytest

from wavecouple.mesh import extract_boundary, make_cube_mesh, make_icosphere


@pytest.fixture(scope="session")
def cube2():
    vol = make_cube_mesh(2, 1.0)
    surf, trace = extract_boundary(vol)
    return vol, surf, trace


@pytest.fixture(scope="session")
def cube3():
    vol = make_cube_mesh(3, 1.0)
    surf, trace = extract_boundary(vol)
    return vol, surf, trace


@pytest.fixture(scope="session")
def sphere1():
    return make_icosphere(1, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
