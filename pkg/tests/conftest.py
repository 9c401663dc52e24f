import numpy as np
import pytest

from bslab import build_disk_mesh, preset


@pytest.fixture(scope="session")
def mesh16():
    return build_disk_mesh(1.0, 16, 32)


@pytest.fixture(scope="session")
def mesh8():
    return build_disk_mesh(1.0, 8, 16)


@pytest.fixture(scope="session")
def desk_mesh():
    return build_disk_mesh(1.0, 32, 64)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_elliptic(mesh, rng, margin=0.5):
    """Random smooth symmetric coefficients with eigenvalues >= margin."""
    c = preset("random_smooth", mesh, seed=int(rng.integers(0, 2**31)))
    return c
