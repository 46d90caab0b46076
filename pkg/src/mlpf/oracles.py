"""Ground truth for the benchmark models.

Scalar Kalman filtering covers the OU model (exact transition and the exact
law of its level-l Euler chain) and GBM (through Z = log X). Langevin and NLM
have no closed form, so a long single-level particle filter at a fine level
stands in for the truth; its results are cached on disk.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mlpf.discretization import Level
from mlpf.models import ModelInstance
from mlpf.rng import REFERENCE_STREAM, stream
from mlpf.smc import ParticleCloud, ResamplePolicy, filter_estimate, pf_step

_LOG_2PI = math.log(2.0 * math.pi)

CACHE_VERSION = 1


@dataclass(frozen=True)
class LinearGaussianSSM:
    """x' = F x + u + N(0, Q);  y = H x + r + N(0, R);  x_0 ~ N(m0, P0)."""

    F: float
    u: float
    Q: float
    H: float = 1.0
    r: float = 0.0
    R: float = 1.0
    m0: float = 0.0
    P0: float = 0.0

    def __post_init__(self):
        if self.Q < 0 or self.P0 < 0:
            raise ValueError("variances must be non-negative")
        if self.R <= 0:
            raise ValueError("observation variance must be positive")


@dataclass(frozen=True)
class KalmanState:
    mean: float
    variance: float
    log_evidence: float = 0.0

    @classmethod
    def prior(cls, ssm: LinearGaussianSSM) -> "KalmanState":
        return cls(ssm.m0, ssm.P0, 0.0)


def kalman_step(state: KalmanState, ssm: LinearGaussianSSM, y: float) -> KalmanState:
    """Predict one interval ahead, then condition on ``y``.

    The evidence gains the log density of ``y`` under the one-step predictive.
    """
    m_pred = ssm.F * state.mean + ssm.u
    p_pred = ssm.F * ssm.F * state.variance + ssm.Q
    s = ssm.H * ssm.H * p_pred + ssm.R
    if not s > 0:
        raise ValueError("non-positive innovation variance")
    innovation = y - (ssm.H * m_pred + ssm.r)
    log_inc = -0.5 * (_LOG_2PI + math.log(s) + innovation * innovation / s)
    gain = p_pred * ssm.H / s
    return KalmanState(
        m_pred + gain * innovation,
        (1.0 - gain * ssm.H) * p_pred,
        state.log_evidence + log_inc,
    )


@dataclass
class KalmanResult:
    means: np.ndarray
    variances: np.ndarray
    log_evidence: np.ndarray  # cumulative, one entry per observation


def kalman_filter(ssm: LinearGaussianSSM, ys: Sequence[float]) -> KalmanResult:
    state = KalmanState.prior(ssm)
    n = len(ys)
    means, variances, evid = np.empty(n), np.empty(n), np.empty(n)
    for k, y in enumerate(ys):
        state = kalman_step(state, ssm, float(y))
        means[k], variances[k], evid[k] = state.mean, state.variance, state.log_evidence
    return KalmanResult(means, variances, evid)


def exact_ou_ssm(theta, mu, sigma, tau2, delta, x0) -> LinearGaussianSSM:
    if theta <= 0:
        raise ValueError("theta must be positive")
    F = math.exp(-theta * delta)
    Q = sigma * sigma * -math.expm1(-2.0 * theta * delta) / (2.0 * theta)
    return LinearGaussianSSM(F, mu * (1.0 - F), Q, 1.0, 0.0, tau2, x0, 0.0)


def euler_ou_ssm(theta, mu, sigma, tau2, level: Level, x0) -> LinearGaussianSSM:
    """Exact law of the level-l Euler chain for OU over one observation interval."""
    a = level.h * theta
    if a >= 1.0:
        raise ValueError(f"unstable discretization: h*theta = {a} >= 1")
    rho = 1.0 - a
    k = level.steps
    F = rho**k
    # sum_{j<k} rho^{2j}
    geometric = k if rho == 1.0 else (1.0 - rho ** (2 * k)) / (1.0 - rho * rho)
    Q = sigma * sigma * level.h * geometric
    return LinearGaussianSSM(F, mu * (1.0 - F), Q, 1.0, 0.0, tau2, x0, 0.0)


def gbm_log_ssm(mu, sigma, tau2, delta, x0) -> LinearGaussianSSM:
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    return LinearGaussianSSM(
        1.0, (mu - 0.5 * sigma * sigma) * delta, sigma * sigma * delta, 1.0, 0.0, tau2, math.log(x0), 0.0
    )


def gbm_filter_mean(result: KalmanResult) -> np.ndarray:
    """E[X | y] from the Gaussian posterior of log X."""
    return np.exp(result.means + 0.5 * result.variances)


def model_ssm(model: ModelInstance, level: Optional[Level] = None) -> LinearGaussianSSM:
    """Linear-Gaussian form of a catalog model; ``level`` selects the Euler law (OU only)."""
    c = model.constants
    if model.name == "ou":
        if level is None:
            return exact_ou_ssm(c["theta"], c["mu"], c["sigma"], c["tau2"], c["delta"], c["x0"])
        return euler_ou_ssm(c["theta"], c["mu"], c["sigma"], c["tau2"], level, c["x0"])
    if model.name == "gbm" and level is None:
        return gbm_log_ssm(c["mu"], c["sigma"], c["tau2"], c["delta"], c["x0"])
    raise ValueError(f"no linear-Gaussian form for model {model.name!r} at level {level}")


@dataclass
class Truth:
    """Per-observation filter means and cumulative log evidence."""

    filter_means: np.ndarray
    log_evidence: np.ndarray
    source: str


def data_hash(ys: Sequence[float]) -> str:
    return hashlib.sha256(np.asarray(ys, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class ReferenceSettings:
    model: str
    variant: str
    constants: dict
    level: int
    n_particles: int
    seed: int
    resample: str
    data_sha256: str

    def key(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:24]


def reference_pf(
    model: ModelInstance,
    ys: Sequence[float],
    level_ref: int = 9,
    n_ref: int = 100_000,
    seed: int = 0,
    policy: ResamplePolicy = ResamplePolicy("adaptive"),
    cache_dir: Optional[os.PathLike] = None,
) -> Truth:
    """Single-level particle filter at ``level_ref`` used as ground truth.

    With ``cache_dir`` set, results are stored as JSON named by a hash of the
    settings and data, and reused on later calls.
    """
    settings = ReferenceSettings(
        model.name, model.variant, dict(model.constants), level_ref, n_ref, seed, str(policy), data_hash(ys)
    )
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"reference-{settings.key()}.json"
        if path.exists():
            return load_reference(path)

    rng = stream(seed, REFERENCE_STREAM, level_ref)
    level = Level(level_ref, model.obs_interval)
    cloud = ParticleCloud.initial(model.x0, n_ref)
    means = np.empty(len(ys))
    evid = np.empty(len(ys))
    for k, y in enumerate(ys):
        pf_step(cloud, float(y), model, level, policy, rng)
        means[k] = filter_estimate(cloud, model.test_function)
        evid[k] = cloud.log_nc
    truth = Truth(means, evid, f"reference_pf(level={level_ref}, N={n_ref}, seed={seed})")

    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "version": CACHE_VERSION,
            "settings": asdict(settings),
            "filter_means": [repr(float(v)) for v in means],
            "log_evidence": [repr(float(v)) for v in evid],
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
        tmp.replace(path)
    return truth


def load_reference(path: os.PathLike) -> Truth:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported reference cache version {doc.get('version')!r}")
    s = doc["settings"]
    return Truth(
        np.array([float(v) for v in doc["filter_means"]]),
        np.array([float(v) for v in doc["log_evidence"]]),
        f"reference_pf(level={s['level']}, N={s['n_particles']}, seed={s['seed']})",
    )


def truth_for(
    model: ModelInstance,
    ys: Sequence[float],
    level_ref: int = 9,
    n_ref: int = 100_000,
    seed: int = 0,
    cache_dir: Optional[os.PathLike] = None,
) -> Truth:
    """Exact Kalman truth for OU and GBM, reference particle filter otherwise."""
    if model.name == "ou":
        res = kalman_filter(model_ssm(model), ys)
        return Truth(res.means, res.log_evidence, "kalman(exact ou)")
    if model.name == "gbm":
        res = kalman_filter(model_ssm(model), ys)
        return Truth(gbm_filter_mean(res), res.log_evidence, "kalman(log gbm)")
    return reference_pf(model, ys, level_ref, n_ref, seed, cache_dir=cache_dir)
