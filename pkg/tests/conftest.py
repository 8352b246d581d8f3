import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("default")


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def rand_hermitian(rng, n):
    A = crandn(rng, n, n)
    return (A + A.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
