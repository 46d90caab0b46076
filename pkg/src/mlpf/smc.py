"""Single-level and coupled particle filters.

A step resamples (according to the policy, using the weights accumulated so
far), propagates through the Euler kernel and then reweights with the new
observation. After a step the cloud therefore holds the weighted particle
approximation of the current filter and the running log normalizing
constant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from mlpf.discretization import Level, propagate, propagate_coupled
from mlpf.models import ModelInstance, TestFunction

ALPHA_ONE = 1.0 - 1e-12
ALPHA_ZERO = 1e-12


class ParticleDeath(RuntimeError):
    """Every particle of a cloud carries zero weight."""


@dataclass
class ParticleCloud:
    positions: np.ndarray
    log_weights: np.ndarray
    log_nc: float = 0.0
    time_index: int = 0
    resample_count: int = 0

    @property
    def n_particles(self) -> int:
        return len(self.positions)

    def weights(self) -> np.ndarray:
        return normalize_weights(self.log_weights)

    @classmethod
    def initial(cls, x0: float, n_particles: int) -> "ParticleCloud":
        if n_particles < 1:
            raise ValueError("need at least one particle")
        return cls(np.full(n_particles, float(x0)), np.zeros(n_particles))


@dataclass
class CoupledCloud:
    fine: ParticleCloud
    coarse: ParticleCloud
    level: Level
    alphas: list = field(default_factory=list)

    def __post_init__(self):
        if self.level.l < 1:
            raise ValueError("coupled clouds need level >= 1")
        if self.fine.n_particles != self.coarse.n_particles:
            raise ValueError("fine and coarse clouds must have equal size")

    @property
    def n_particles(self) -> int:
        return self.fine.n_particles

    @property
    def time_index(self) -> int:
        return self.fine.time_index

    @classmethod
    def initial(cls, x0: float, level: Level, n_particles: int) -> "CoupledCloud":
        return cls(ParticleCloud.initial(x0, n_particles), ParticleCloud.initial(x0, n_particles), level)


@dataclass(frozen=True)
class ResampleIndices:
    fine_idx: np.ndarray
    coarse_idx: np.ndarray
    coupled_fraction: float
    alpha: float


@dataclass(frozen=True)
class ResamplePolicy:
    """``always`` resamples every step; ``adaptive`` when ESS < threshold * N."""

    kind: str = "adaptive"
    threshold: float = 0.25

    def __post_init__(self):
        if self.kind not in ("always", "adaptive"):
            raise ValueError(f"unknown resampling policy {self.kind!r}")

    def triggered(self, weights: np.ndarray) -> bool:
        if self.kind == "always":
            return True
        return ess(weights) < self.threshold * len(weights)

    @classmethod
    def parse(cls, text: str) -> "ResamplePolicy":
        if text == "always":
            return cls("always")
        if text.startswith("adaptive"):
            inner = text[len("adaptive"):].strip("()")
            return cls("adaptive", float(inner) if inner else 0.25)
        raise ValueError(f"unknown resampling policy {text!r}")

    def __str__(self):
        return "always" if self.kind == "always" else f"adaptive({self.threshold:g})"


def logsumexp(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    top = lw.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(lw - top).sum()))


def normalize_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    top = lw.max()
    if not np.isfinite(top):
        raise ParticleDeath("all particle weights are zero")
    w = np.exp(lw - top)
    return w / w.sum()


def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def _categorical(probs: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` i.i.d. draws from ``probs``, returned grouped by value (not shuffled)."""
    p = np.asarray(probs, dtype=float)
    counts = rng.multinomial(size, p / p.sum())
    return np.repeat(np.arange(len(p)), counts)


def multinomial_resample(weights, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Multinomial ancestor indices, grouped by ancestor.

    The ordering carries no information; particles are exchangeable.
    """
    w = np.asarray(weights, dtype=float)
    return _categorical(w, len(w) if size is None else size, rng)


def coupled_resample(w_fine, w_coarse, rng: np.random.Generator) -> ResampleIndices:
    """Maximally coupled multinomial resampling of a fine/coarse pair of clouds.

    Each pair independently: with probability alpha = sum_j min(wf_j, wc_j) both
    indices equal one draw from min(wf, wc) / alpha; otherwise the indices are
    drawn independently from the normalised residuals wf - min and wc - min.
    """
    wf = np.asarray(w_fine, dtype=float)
    wc = np.asarray(w_coarse, dtype=float)
    n = len(wf)
    overlap = np.minimum(wf, wc)
    alpha = float(overlap.sum())

    if alpha >= ALPHA_ONE:
        idx = _categorical(overlap, n, rng)
        return ResampleIndices(idx, idx.copy(), 1.0, alpha)

    if alpha <= ALPHA_ZERO:
        n_coupled = 0
        coupled = np.zeros(n, dtype=bool)
    else:
        coupled = rng.random(n) < alpha
        n_coupled = int(coupled.sum())

    fine_idx = np.empty(n, dtype=np.intp)
    coarse_idx = np.empty(n, dtype=np.intp)
    if n_coupled:
        shared = _categorical(overlap, n_coupled, rng)
        fine_idx[coupled] = shared
        coarse_idx[coupled] = shared
    if n_coupled < n:
        free = ~coupled
        fine_idx[free] = _categorical(wf - overlap, n - n_coupled, rng)
        # shuffled so the pairing with fine_idx is independent
        coarse_idx[free] = rng.permutation(_categorical(wc - overlap, n - n_coupled, rng))
    return ResampleIndices(fine_idx, coarse_idx, n_coupled / n, alpha)


def coupled_resample_laws(w_fine, w_coarse):
    """Index laws of :func:`coupled_resample`, assembled from its two branches.

    Returns ``(alpha, shared, residual_fine, residual_coarse, marginal_fine,
    marginal_coarse)`` where the marginals are alpha * shared + (1 - alpha) *
    residual. They reproduce the input weights up to rounding.
    """
    wf = np.asarray(w_fine, dtype=float)
    wc = np.asarray(w_coarse, dtype=float)
    overlap = np.minimum(wf, wc)
    alpha = float(overlap.sum())
    shared = overlap / alpha if alpha > 0 else np.zeros_like(overlap)
    if alpha < 1.0:
        res_f = (wf - overlap) / (1.0 - alpha)
        res_c = (wc - overlap) / (1.0 - alpha)
    else:
        res_f = res_c = np.zeros_like(overlap)
    return (
        alpha,
        shared,
        res_f,
        res_c,
        alpha * shared + (1.0 - alpha) * res_f,
        alpha * shared + (1.0 - alpha) * res_c,
    )


def _reweight(cloud: ParticleCloud, log_g: np.ndarray) -> None:
    before = logsumexp(cloud.log_weights)
    lw = cloud.log_weights + log_g
    after = logsumexp(lw)
    if not np.isfinite(after):
        raise ParticleDeath(f"all particles died at time {cloud.time_index}")
    cloud.log_weights = lw
    cloud.log_nc += float(after - before)


def pf_step(
    cloud: ParticleCloud,
    y: float,
    model: ModelInstance,
    level: Level,
    policy: ResamplePolicy,
    rng: np.random.Generator,
) -> ParticleCloud:
    """One observation step of the bootstrap filter; mutates and returns ``cloud``.

    The evidence increment is log sum_i exp(lw_i + log G_i) - log sum_i exp(lw_i),
    which reduces to the log mean of G after a resampling step.
    """
    w = cloud.weights()
    if policy.triggered(w):
        idx = multinomial_resample(w, rng)
        cloud.positions = cloud.positions[idx]
        cloud.log_weights = np.zeros(cloud.n_particles)
        cloud.resample_count += 1

    cloud.positions = propagate(model, level, cloud.positions, rng)
    _reweight(cloud, model.log_likelihood(cloud.positions, y))
    cloud.time_index += 1
    return cloud


def cpf_step(
    coupled: CoupledCloud,
    y: float,
    model: ModelInstance,
    policy: ResamplePolicy,
    rng: np.random.Generator,
    trace: Optional["TraceWriter"] = None,
) -> CoupledCloud:
    """One observation step of the coupled fine/coarse filter; mutates and returns ``coupled``.

    The adaptive trigger looks at the coarse ESS only; when it fires both
    marginals resample jointly through :func:`coupled_resample`.
    """
    fine, coarse = coupled.fine, coupled.coarse
    wf, wc = fine.weights(), coarse.weights()
    alpha = None
    if policy.triggered(wc):
        ri = coupled_resample(wf, wc, rng)
        fine.positions = fine.positions[ri.fine_idx]
        coarse.positions = coarse.positions[ri.coarse_idx]
        fine.log_weights = np.zeros(fine.n_particles)
        coarse.log_weights = np.zeros(coarse.n_particles)
        fine.resample_count += 1
        coarse.resample_count += 1
        alpha = ri.alpha
        coupled.alphas.append(alpha)

    fine.positions, coarse.positions = propagate_coupled(
        model, coupled.level, fine.positions, coarse.positions, rng
    )
    try:
        _reweight(fine, model.log_likelihood(fine.positions, y))
    except ParticleDeath as exc:
        raise ParticleDeath(f"fine marginal: {exc}") from None
    try:
        _reweight(coarse, model.log_likelihood(coarse.positions, y))
    except ParticleDeath as exc:
        raise ParticleDeath(f"coarse marginal: {exc}") from None
    fine.time_index += 1
    coarse.time_index += 1
    if trace is not None:
        trace.write(coupled, alpha)
    return coupled


def filter_estimate(cloud: ParticleCloud, phi: TestFunction) -> float:
    return float(np.dot(cloud.weights(), phi(cloud.positions)))


def filter_increment_estimate(coupled: CoupledCloud, phi: TestFunction) -> float:
    """sum_i wf_i phi(xf_i) - sum_i wc_i phi(xc_i) with the current normalised weights."""
    return filter_estimate(coupled.fine, phi) - filter_estimate(coupled.coarse, phi)


class TraceWriter:
    """Streams per-step coupled-filter diagnostics as CSV rows."""

    header = ("time", "level", "ess_fine", "ess_coarse", "alpha", "log_nc_fine", "log_nc_coarse")

    def __init__(self, handle: IO[str]):
        self._writer = csv.writer(handle, lineterminator="\n")
        self._writer.writerow(self.header)

    def write(self, coupled: CoupledCloud, alpha: Optional[float]) -> None:
        self._writer.writerow(
            (
                coupled.time_index,
                coupled.level.l,
                repr(ess(coupled.fine.weights())),
                repr(ess(coupled.coarse.weights())),
                "" if alpha is None else repr(alpha),
                repr(coupled.fine.log_nc),
                repr(coupled.coarse.log_nc),
            )
        )
