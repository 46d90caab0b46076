"""Partially observed diffusion models and the builtin benchmark catalog.

Every model is scalar (d = 1). State arguments are numpy arrays holding one
entry per particle; all callables are vectorised over that axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from mlpf import _kernels as _k

ArrayFn = Callable[[np.ndarray], np.ndarray]

#: log-density substituted for GBM particles that Euler drove to x <= 0
GBM_LOG_FLOOR = -690.0

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DiffusionModel:
    """dX = drift(X) dt + diffusion(X) dW, started at ``x0``."""

    name: str
    drift: ArrayFn
    diffusion: ArrayFn
    x0: float
    obs_interval: float
    dim: int = 1
    constant_diffusion: bool = False
    #: scalar diffusion value when ``constant_diffusion``; lets the Euler loop skip a call
    diffusion_value: float | None = None
    #: (drift kind, drift params, diffusion kind, diffusion params) for the compiled kernel
    kernel: tuple | None = None

    def check_ellipticity(self, x: np.ndarray) -> None:
        b = np.asarray(self.diffusion(np.asarray(x, dtype=float)))
        if not np.all(np.isfinite(b)) or np.any(b <= 0.0):
            raise ValueError(f"{self.name}: diffusion coefficient not positive on sampled states")


@dataclass(frozen=True)
class ObservationModel:
    """Observation density G(x, y) given as a log-likelihood plus a sampler."""

    log_likelihood: Callable[[np.ndarray, float], np.ndarray]
    sample: Callable[[float, np.random.Generator], float]


@dataclass(frozen=True)
class TestFunction:
    phi: ArrayFn
    __test__ = False  # keep pytest from collecting this class

    def __call__(self, x):
        return self.phi(x)


@dataclass(frozen=True)
class ModelInstance:
    diffusion_model: DiffusionModel
    observation_model: ObservationModel
    test_function: TestFunction
    constants: Mapping[str, float] = field(default_factory=dict)
    variant: str = ""

    @property
    def name(self) -> str:
        return self.diffusion_model.name

    @property
    def x0(self) -> float:
        return self.diffusion_model.x0

    @property
    def obs_interval(self) -> float:
        return self.diffusion_model.obs_interval

    @property
    def beta(self) -> int:
        """Strong-error rate used for allocation: 2 for constant diffusion, else 1."""
        return 2 if self.diffusion_model.constant_diffusion else 1

    def drift(self, x):
        return self.diffusion_model.drift(x)

    def diffusion(self, x):
        return self.diffusion_model.diffusion(x)

    def log_likelihood(self, x, y):
        return self.observation_model.log_likelihood(x, y)

    def phi(self, x):
        return self.test_function.phi(x)

    def sample_observation(self, x: float, rng: np.random.Generator) -> float:
        return self.observation_model.sample(x, rng)


def _gaussian_logpdf(y, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (y - mean) ** 2 / var


def _constant(value: float) -> ArrayFn:
    def b(x):
        return np.full(np.shape(x), value, dtype=float)

    return b


def _kernel_spec(drift_kind, drift_params, diffusion_kind, diffusion_params):
    return (
        drift_kind,
        np.array(drift_params, dtype=float),
        diffusion_kind,
        np.array(diffusion_params, dtype=float),
    )


def _freeze(constants: dict) -> Mapping[str, float]:
    return MappingProxyType(dict(constants))


def _merge(defaults: dict, overrides: Mapping[str, float] | None) -> dict:
    constants = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in constants:
            raise KeyError(f"unknown constant {key!r}; expected one of {sorted(constants)}")
        constants[key] = float(value)
    return constants


OU_DEFAULTS = {"x0": 0.0, "delta": 0.5, "theta": 1.0, "mu": 0.0, "sigma": 0.5, "tau2": 0.2}
GBM_DEFAULTS = {"x0": 1.0, "delta": 0.001, "mu": 0.02, "sigma": 0.2, "tau2": 0.01}
LANGEVIN_DEFAULTS = {"x0": 0.0, "delta": 1.0, "sigma": 1.0, "tau2": 1.0, "nu": 10.0}
NLM_DEFAULTS = {"x0": 0.0, "delta": 0.5, "theta": 1.0, "mu": 0.0, "sigma": 1.0, "s": math.sqrt(0.1)}


def ou_model(overrides: Mapping[str, float] | None = None) -> ModelInstance:
    """Ornstein-Uhlenbeck latent state with Gaussian observations, phi(x) = x."""
    c = _merge(OU_DEFAULTS, overrides)
    theta, mu, sigma, tau2 = c["theta"], c["mu"], c["sigma"], c["tau2"]
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")

    def drift(x):
        return theta * (mu - np.asarray(x, dtype=float))

    def loglik(x, y):
        return _gaussian_logpdf(y, np.asarray(x, dtype=float), tau2)

    def sample(x, rng):
        return float(x + math.sqrt(tau2) * rng.standard_normal())

    return ModelInstance(
        DiffusionModel(
            "ou", drift, _constant(sigma), c["x0"], c["delta"], constant_diffusion=True, diffusion_value=sigma,
            kernel=_kernel_spec(_k.DRIFT_MEAN_REVERTING, (theta, mu), _k.DIFFUSION_CONSTANT, (sigma,)),
        ),
        ObservationModel(loglik, sample),
        TestFunction(lambda x: np.asarray(x, dtype=float)),
        _freeze(c),
    )


def gbm_model(overrides: Mapping[str, float] | None = None) -> ModelInstance:
    """Geometric Brownian motion observed through N(log x, tau2)."""
    c = _merge(GBM_DEFAULTS, overrides)
    mu, sigma, tau2 = c["mu"], c["sigma"], c["tau2"]
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")

    def drift(x):
        return mu * np.asarray(x, dtype=float)

    def diffusion(x):
        return sigma * np.asarray(x, dtype=float)

    def loglik(x, y):
        x = np.asarray(x, dtype=float)
        positive = x > 0.0
        logx = np.log(np.where(positive, x, 1.0))
        return np.where(positive, _gaussian_logpdf(y, logx, tau2), GBM_LOG_FLOOR)

    def sample(x, rng):
        if x <= 0.0:
            raise ValueError(f"gbm: cannot observe log of non-positive state {x!r}")
        return float(math.log(x) + math.sqrt(tau2) * rng.standard_normal())

    return ModelInstance(
        DiffusionModel(
            "gbm", drift, diffusion, c["x0"], c["delta"],
            kernel=_kernel_spec(_k.DRIFT_PROPORTIONAL, (mu,), _k.DIFFUSION_PROPORTIONAL, (sigma,)),
        ),
        ObservationModel(loglik, sample),
        TestFunction(lambda x: np.asarray(x, dtype=float)),
        _freeze(c),
    )


def langevin_model(overrides: Mapping[str, float] | None = None) -> ModelInstance:
    """Langevin SDE for a Student-t target with stochastic-volatility style observations."""
    c = _merge(LANGEVIN_DEFAULTS, overrides)
    sigma, tau2, nu = c["sigma"], c["tau2"], c["nu"]
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")

    def drift(x):
        x = np.asarray(x, dtype=float)
        return -(nu + 1.0) * x / (2.0 * (nu + x * x))

    def loglik(x, y):
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG_2PI + math.log(tau2) + x) - 0.5 * y * y / (tau2 * np.exp(x))

    def sample(x, rng):
        return float(math.sqrt(tau2 * math.exp(x)) * rng.standard_normal())

    return ModelInstance(
        DiffusionModel(
            "langevin", drift, _constant(sigma), c["x0"], c["delta"], constant_diffusion=True,
            diffusion_value=sigma,
            kernel=_kernel_spec(_k.DRIFT_STUDENT_T_LANGEVIN, (nu,), _k.DIFFUSION_CONSTANT, (sigma,)),
        ),
        ObservationModel(loglik, sample),
        TestFunction(lambda x: tau2 * np.exp(np.asarray(x, dtype=float))),
        _freeze(c),
    )


def nlm_model(
    overrides: Mapping[str, float] | None = None, observation: str = "laplace"
) -> ModelInstance:
    """Mean-reverting SDE with state-dependent diffusion sigma / sqrt(1 + x^2).

    ``observation`` selects the observation density: ``"laplace"`` (location x,
    scale s) or ``"lognormal"`` (log y ~ N(x, s^2)).
    """
    c = _merge(NLM_DEFAULTS, overrides)
    theta, mu, sigma, s = c["theta"], c["mu"], c["sigma"], c["s"]
    if s <= 0:
        raise ValueError("s must be positive")

    def drift(x):
        return theta * (mu - np.asarray(x, dtype=float))

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return sigma / np.sqrt(1.0 + x * x)

    if observation == "laplace":

        def loglik(x, y):
            return -np.abs(y - np.asarray(x, dtype=float)) / s - math.log(2.0 * s)

        def sample(x, rng):
            return float(rng.laplace(x, s))

    elif observation == "lognormal":

        def loglik(x, y):
            x = np.asarray(x, dtype=float)
            if y <= 0:
                return np.full(x.shape, -np.inf)
            logy = math.log(y)
            return _gaussian_logpdf(logy, x, s * s) - logy

        def sample(x, rng):
            return float(math.exp(x + s * rng.standard_normal()))

    else:
        raise ValueError(f"unknown nlm observation density {observation!r}")

    return ModelInstance(
        DiffusionModel(
            "nlm", drift, diffusion, c["x0"], c["delta"],
            kernel=_kernel_spec(_k.DRIFT_MEAN_REVERTING, (theta, mu), _k.DIFFUSION_DAMPED, (sigma,)),
        ),
        ObservationModel(loglik, sample),
        TestFunction(lambda x: np.asarray(x, dtype=float)),
        _freeze(c),
        variant=observation,
    )


CATALOG: dict[str, Callable[..., ModelInstance]] = {
    "ou": ou_model,
    "gbm": gbm_model,
    "langevin": langevin_model,
    "nlm": nlm_model,
}


def get_model(
    name: str, overrides: Mapping[str, float] | None = None, **options
) -> ModelInstance:
    """Build a catalog model by name, applying constant overrides."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(overrides, **options)
