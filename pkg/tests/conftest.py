import numpy as np
import pytest

from parafem import assembly, fespace, mesh


@pytest.fixture(scope="session")
def square4():
    return mesh.build_structured_square(4)


@pytest.fixture(scope="session")
def square8():
    return mesh.build_structured_square(8)


@pytest.fixture(scope="session")
def space4(square4):
    return fespace.build_space(square4, 1)


@pytest.fixture(scope="session")
def space8(square8):
    return fespace.build_space(square8, 1)


@pytest.fixture(scope="session")
def identity_field():
    return assembly.coefficient_library("identity")


@pytest.fixture(scope="session")
def kink_field():
    return assembly.coefficient_library("lipschitz_kink")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_fe_function(space, rng, scale=1.0):
    return fespace.FeFunction(space, scale * rng.standard_normal(space.num_dofs))
