import math

import numpy as np
import pytest

from mlpf.models import DiffusionModel, ModelInstance, ObservationModel, TestFunction


def make_model(drift=None, diffusion=1.0, x0=0.0, delta=1.0, loglik=None, phi=None, name="custom"):
    """Small ad hoc model; ``diffusion`` may be a constant or a callable."""
    if drift is None:
        drift = lambda x: np.zeros(np.shape(x))
    if callable(diffusion):
        b, const, value = diffusion, False, None
    else:
        value = float(diffusion)
        b, const = (lambda x: np.full(np.shape(x), value)), True
    if loglik is None:
        loglik = lambda x, y: -0.5 * (math.log(2 * math.pi) + (y - np.asarray(x)) ** 2)
    if phi is None:
        phi = lambda x: np.asarray(x, dtype=float)
    return ModelInstance(
        DiffusionModel(name, drift, b, x0, delta, constant_diffusion=const, diffusion_value=value),
        ObservationModel(loglik, lambda x, rng: float(x + rng.standard_normal())),
        TestFunction(phi),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
