import numpy as np
import pytest

from parisian_bailout import LevyModel, PayoffFn

BROWNIAN = LevyModel(0.1, 1.0)
CRAMER_LUNDBERG = LevyModel(1.5, 0.0, 1.0, (1.0,), (1.0,))
HYPEREXP_BV = LevyModel(2.0, 0.0, 1.2, (0.4, 0.6), (0.8, 2.5))
JUMP_DIFFUSION = LevyModel(1.2, 0.3, 1.5, (0.3, 0.7), (0.5, 3.0))

MODELS = {
    "brownian": BROWNIAN,
    "cramer_lundberg": CRAMER_LUNDBERG,
    "hyperexp_bv": HYPEREXP_BV,
    "jump_diffusion": JUMP_DIFFUSION,
}

PAYOFF = PayoffFn([0.0, 1.0, 3.0], [0.0, 1.2, 2.0], terminal_slope=0.1)


@pytest.fixture(params=list(MODELS), ids=list(MODELS))
def model(request):
    return MODELS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
