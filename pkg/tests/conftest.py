import numpy as np
import pytest

from irglab.kernel import TypeSpace, build_kernel, constant_kernel


@pytest.fixture
def two_type_c3():
    space = TypeSpace([1, 2], [0.5, 0.5])
    return build_kernel({"builder": "explicit", "matrix": [[0.3, 0.5], [0.5, 0.7]]}, space)


@pytest.fixture
def scalar():
    return constant_kernel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
