"""Normalizing-constant and filter estimators built from per-level outputs,
plus particle allocation rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class SignedLog:
    """A real number stored as sign * exp(log_abs)."""

    sign: int
    log_abs: float

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise ValueError("sign must be -1, 0 or +1")
        if self.sign == 0 and self.log_abs != -math.inf:
            object.__setattr__(self, "log_abs", -math.inf)
        if self.sign != 0 and self.log_abs == -math.inf:
            object.__setattr__(self, "sign", 0)

    @classmethod
    def zero(cls) -> "SignedLog":
        return cls(0, -math.inf)

    @classmethod
    def from_log(cls, log_value: float) -> "SignedLog":
        return cls(1, float(log_value))

    @classmethod
    def from_float(cls, value: float) -> "SignedLog":
        if value == 0:
            return cls.zero()
        return cls(1 if value > 0 else -1, math.log(abs(value)))

    def __float__(self) -> float:
        return self.sign * math.exp(self.log_abs) if self.sign else 0.0

    def __neg__(self) -> "SignedLog":
        return SignedLog(-self.sign, self.log_abs)

    def __add__(self, other: "SignedLog") -> "SignedLog":
        return signed_logsumexp([self.log_abs, other.log_abs], [self.sign, other.sign])

    def __sub__(self, other: "SignedLog") -> "SignedLog":
        return self + (-other)

    def __mul__(self, other: "SignedLog") -> "SignedLog":
        if self.sign == 0 or other.sign == 0:
            return SignedLog.zero()
        return SignedLog(self.sign * other.sign, self.log_abs + other.log_abs)

    def scaled(self, log_factor: float) -> "SignedLog":
        """Multiply by exp(log_factor)."""
        return SignedLog(self.sign, self.log_abs + log_factor) if self.sign else self

    def isclose(self, other: "SignedLog", rel_tol: float = 1e-12) -> bool:
        if self.sign == 0 or other.sign == 0:
            return self.sign == other.sign
        if self.sign != other.sign:
            return False
        return abs(math.expm1(self.log_abs - other.log_abs)) <= rel_tol or abs(
            math.expm1(other.log_abs - self.log_abs)
        ) <= rel_tol


def signed_logsumexp(log_abs: Sequence[float], signs: Sequence[int]) -> SignedLog:
    """Sum of sign_i * exp(log_abs_i) returned in signed log form."""
    terms = [(s, a) for s, a in zip(signs, log_abs) if s != 0 and a != -math.inf]
    if not terms:
        return SignedLog.zero()
    top = max(a for _, a in terms)
    if top == math.inf:
        raise OverflowError("infinite magnitude in signed log sum")
    total = math.fsum(s * math.exp(a - top) for s, a in terms)
    if total == 0.0:
        return SignedLog.zero()
    return SignedLog(1 if total > 0 else -1, top + math.log(abs(total)))


@dataclass
class LevelEstimates:
    """Outputs of the filter(s) run at one level of a multilevel run.

    ``log_nc_coarse`` is ``None`` at level 0. ``cost`` is measured in Euler
    steps times particles.
    """

    l: int
    n_particles: int
    log_nc_fine: float
    log_nc_coarse: Optional[float] = None
    filter_increments: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cost: int = 0
    mean_alpha: float = float("nan")
    resample_count: int = 0
    log_nc_trace_fine: np.ndarray = field(default_factory=lambda: np.zeros(0))
    log_nc_trace_coarse: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @staticmethod
    def level_cost(l: int, n_particles: int, n_obs: int) -> int:
        coarse_steps = (1 << (l - 1)) if l > 0 else 0
        return n_particles * ((1 << l) + coarse_steps) * n_obs


def nc_single_level(trace: Sequence[float]) -> float:
    """Log evidence from per-step log increments (log mean weights under full resampling)."""
    trace = list(trace)
    if not trace:
        raise ValueError("need at least one recorded step")
    return math.fsum(trace)


def _check_levels(levels: Sequence[LevelEstimates]) -> None:
    if not levels or levels[0].l != 0:
        raise ValueError("level 0 must be present first")
    for expected, est in enumerate(levels):
        if est.l != expected:
            raise ValueError("levels must be consecutive from 0")
        if est.l > 0 and est.log_nc_coarse is None:
            raise ValueError(f"level {est.l} lacks a coarse evidence estimate")


def nc_ml_unbiased(levels: Sequence[LevelEstimates]) -> SignedLog:
    """Telescoping sum over levels of (fine evidence - coarse evidence); may be negative."""
    _check_levels(levels)
    log_abs = [levels[0].log_nc_fine]
    signs = [1]
    for est in levels[1:]:
        log_abs += [est.log_nc_fine, est.log_nc_coarse]
        signs += [1, -1]
    return signed_logsumexp(log_abs, signs)


def nc_ml_biased(levels: Sequence[LevelEstimates]) -> float:
    """Log of the level-0 evidence times the product of fine/coarse evidence ratios."""
    _check_levels(levels)
    values = [levels[0].log_nc_fine]
    for est in levels[1:]:
        values += [est.log_nc_fine, -est.log_nc_coarse]
    if any(v in (math.inf, -math.inf) or math.isnan(v) for v in values):
        raise ValueError("degenerate (zero or infinite) evidence estimate in biased product")
    return math.fsum(values)


def filter_ml_estimate(levels: Sequence[LevelEstimates], time: int = -1) -> float:
    """Multilevel filter estimate at observation ``time`` (index into the increments)."""
    _check_levels(levels)
    return math.fsum(float(est.filter_increments[time]) for est in levels)


@dataclass(frozen=True)
class Allocation:
    L: int
    N: tuple
    rule: str

    def __post_init__(self):
        if len(self.N) != self.L + 1:
            raise ValueError("need one particle count per level")
        if any(n < 1 for n in self.N):
            raise ValueError("every level needs at least one particle")
        if any(a < b for a, b in zip(self.N, self.N[1:])):
            raise ValueError("particle counts must be non-increasing in l")

    def cost(self, n_obs: int) -> int:
        return sum(LevelEstimates.level_cost(l, n, n_obs) for l, n in enumerate(self.N))

    def scaled(self, factor: float) -> "Allocation":
        return Allocation(self.L, tuple(max(1, int(math.floor(n * factor))) for n in self.N), self.rule)


MAX_LEVEL = 20


def allocate_section5(L: int, beta: int, gamma: int = 1, scale: float = 1.0) -> Allocation:
    """N_l = floor(N_{0,L} h_l^{(beta + 2 gamma)/4}) with h_l = 2^-l.

    N_{0,L} = 2^{2L} L when beta = 2 (constant diffusion), otherwise 2^{9L/4};
    ``scale`` multiplies N_{0,L}.
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    if L > MAX_LEVEL:
        raise OverflowError(f"L={L} exceeds the supported maximum {MAX_LEVEL}")
    if beta not in (1, 2):
        raise ValueError("beta must be 1 or 2")
    if gamma != 1:
        raise ValueError("only gamma = 1 (Euler cost) is supported")
    # powers of two are formed from exact quarter exponents so that integral
    # counts such as 2^6 do not round down
    if beta == 2:
        quarters, factor = 8 * L, max(L, 1)
    else:
        quarters, factor = 9 * L, 1
    step = beta + 2 * gamma
    counts = tuple(
        max(1, int(math.floor(scale * factor * 2.0 ** ((quarters - step * l) / 4)))) for l in range(L + 1)
    )
    return Allocation(L, counts, "section5")


def allocate_section4(epsilon: float, C: float = 1.0) -> Allocation:
    """L = ceil(log2(1/eps)); N_l = max(1, floor(C eps^-2 h_l^{3/4} K_L)), K_L = sum_l h_l^{-1/4}."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if C <= 0:
        raise ValueError("C must be positive")
    L = math.ceil(math.log2(1.0 / epsilon))
    k_l = sum(2.0 ** (l / 4.0) for l in range(L + 1))
    counts = tuple(
        max(1, int(math.floor(C * epsilon**-2 * 2.0 ** (-0.75 * l) * k_l))) for l in range(L + 1)
    )
    return Allocation(L, counts, "section4")


@dataclass(frozen=True)
class MLMCCase:
    label: str
    K: str
    cost: str
    cost_exponent: float
    log_power: int


def mlmc_case(beta: float, gamma: float) -> MLMCCase:
    """Asymptotic MLMC cost regime for variance rate beta and cost rate gamma.

    ``cost_exponent`` e and ``log_power`` p describe C(eps) = O(eps^-e |log eps|^p).
    """
    if beta <= 0 or gamma <= 0:
        raise ValueError("rates must be positive")
    if beta > gamma:
        return MLMCCase("beta_gt_gamma", "O(1)", "O(eps^-2)", 2.0, 0)
    if beta == gamma:
        return MLMCCase("beta_eq_gamma", "O(-log(eps))", "O(eps^-2 log(eps)^2)", 2.0, 2)
    e = 2.0 - (beta - gamma)
    return MLMCCase(
        "beta_lt_gamma", f"O(eps^{(beta - gamma) / 2:g})", f"O(eps^-{e:g})", e, 0
    )
