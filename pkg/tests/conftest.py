import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_tangent(rng, p, scale=1.0):
    v = rng.standard_normal(p.size)
    v -= p * np.dot(p, v)
    return scale * v
