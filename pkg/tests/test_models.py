import math

import numpy as np
import pytest

from mlpf.discretization import Level, euler_transition
from mlpf.models import CATALOG, GBM_LOG_FLOOR, get_model


def test_ou_examples():
    m = get_model("ou")
    assert m.drift(np.array([2.0]))[0] == -2.0
    assert m.drift(np.array([0.0]))[0] == 0.0
    assert m.log_likelihood(np.array([0.0]), 0.0)[0] == pytest.approx(-0.5 * math.log(2 * math.pi * 0.2), abs=1e-14)
    assert dict(m.constants) == {"x0": 0.0, "delta": 0.5, "theta": 1.0, "mu": 0.0, "sigma": 0.5, "tau2": 0.2}
    assert m.beta == 2


def test_gbm_examples():
    m = get_model("gbm")
    assert m.diffusion(np.array([1.0]))[0] == pytest.approx(0.2)
    assert m.drift(np.array([0.0]))[0] == 0.0
    assert m.log_likelihood(np.array([1.0]), 0.0)[0] == pytest.approx(-0.5 * math.log(2 * math.pi * 0.01), abs=1e-14)
    assert m.beta == 1


def test_gbm_non_positive_state():
    m = get_model("gbm")
    assert m.log_likelihood(np.array([-1.0, 0.0]), 0.3).tolist() == [GBM_LOG_FLOOR, GBM_LOG_FLOOR]
    with pytest.raises(ValueError):
        m.sample_observation(0.0, np.random.default_rng(0))


def test_langevin_examples():
    m = get_model("langevin")
    assert m.drift(np.array([0.0]))[0] == 0.0
    assert m.drift(np.array([1.0]))[0] == pytest.approx(-0.5, abs=1e-15)
    assert m.log_likelihood(np.array([0.0]), 0.0)[0] == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)
    assert m.phi(np.array([0.0]))[0] == 1.0
    assert m.beta == 2


def test_nlm_examples():
    m = get_model("nlm")
    assert m.diffusion(np.array([0.0]))[0] == 1.0
    assert m.log_likelihood(np.array([0.0]), 0.0)[0] == pytest.approx(-math.log(2 * math.sqrt(0.1)), abs=1e-14)
    assert m.drift(np.array([3.0]))[0] == -3.0
    assert m.variant == "laplace"
    assert get_model("nlm", observation="lognormal").variant == "lognormal"


def test_overrides_and_unknown_keys():
    m = get_model("ou", {"theta": 1.5})
    assert m.constants["theta"] == 1.5
    with pytest.raises(KeyError):
        get_model("ou", {"nu": 1.0})
    with pytest.raises(KeyError):
        get_model("heston")
    with pytest.raises(ValueError):
        get_model("ou", {"tau2": 0.0})


def test_constants_are_read_only():
    m = get_model("ou")
    with pytest.raises(TypeError):
        m.constants["theta"] = 2.0


QUAD_STATES = {"ou": (-2, 0, 2), "gbm": (0.5, 1, 2), "langevin": (-2, 0, 2), "nlm": (-2, 0, 2)}


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_likelihood_integrates_to_one(name):
    from scipy.integrate import quad

    m = get_model(name)
    for x in QUAD_STATES[name]:
        f = lambda y: math.exp(m.log_likelihood(np.array([float(x)]), y)[0])
        centre = math.log(x) if name == "gbm" else (0.0 if name == "langevin" else x)
        # split at the mode so quad sees the Laplace kink
        total = quad(f, -np.inf, centre, epsabs=1e-12, limit=200)[0] + quad(f, centre, np.inf, epsabs=1e-12, limit=200)[0]
        assert abs(total - 1.0) < 1e-6, (name, x, total)


def test_lognormal_variant_integrates_to_one():
    from scipy.integrate import quad

    m = get_model("nlm", observation="lognormal")
    for x in (-2.0, 0.0, 2.0):
        f = lambda y: math.exp(m.log_likelihood(np.array([x]), y)[0])
        total = quad(f, 0, math.exp(x), limit=200)[0] + quad(f, math.exp(x), np.inf, limit=200)[0]
        assert abs(total - 1.0) < 1e-6


def test_langevin_drift_is_half_grad_log_student_t():
    m = get_model("langevin")
    nu = m.constants["nu"]
    log_pi = lambda x: -(nu + 1) / 2 * math.log(1 + x * x / nu)
    eps = 1e-5
    for x in np.linspace(-4, 4, 20):
        fd = 0.5 * (log_pi(x + eps) - log_pi(x - eps)) / (2 * eps)
        assert abs(m.drift(np.array([x]))[0] - fd) < 1e-6


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_functions_finite_along_simulated_path(name):
    m = get_model(name)
    rng = np.random.default_rng(3)
    level = Level(6, m.obs_interval)
    x = np.array([m.x0])
    states = []
    for _ in range(100):
        x = euler_transition(m, level, x, rng.standard_normal((1, level.steps)))
        states.append(x[0])
    s = np.array(states)
    assert np.all(np.isfinite(m.drift(s)))
    assert np.all(np.isfinite(m.log_likelihood(s, 0.1)))
    assert np.all(np.isfinite(m.phi(s)))
    m.diffusion_model.check_ellipticity(s)


def test_ellipticity_check_rejects_zero_diffusion():
    m = get_model("gbm")
    with pytest.raises(ValueError):
        m.diffusion_model.check_ellipticity(np.array([0.0]))
