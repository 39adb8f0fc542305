import numpy as np
import pytest

from bscahn.geometry import build_disk_mesh, assemble_fem


@pytest.fixture(scope="session")
def fem1():
    return assemble_fem(build_disk_mesh(1))


@pytest.fixture(scope="session")
def fem2():
    return assemble_fem(build_disk_mesh(2))


@pytest.fixture(scope="session")
def fem3():
    return assemble_fem(build_disk_mesh(3))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
