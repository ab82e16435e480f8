import numpy as np
import pytest

from torusshadow.models import builtin_model


@pytest.fixture(scope="session")
def linear():
    return builtin_model("linear")


@pytest.fixture(scope="session")
def skew():
    return builtin_model("skew")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
