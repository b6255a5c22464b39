import numpy as np
import pytest

from ceic.systems import (
    cart_pole_model,
    double_pendulum_cart_model,
    triple_pendulum_model,
)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["cart_pole", "double", "triple"])
def any_model(request):
    return {"cart_pole": cart_pole_model, "double": double_pendulum_cart_model,
            "triple": triple_pendulum_model}[request.param]()


@pytest.fixture
def triple():
    return triple_pendulum_model()


@pytest.fixture
def cart_pole():
    return cart_pole_model()
