"""Euler-Maruyama transitions between observation times.

Level ``l`` integrates one observation interval of length ``delta`` with
``2**l`` steps of size ``delta * 2**-l``. The coupled transition drives the
level ``l - 1`` chain with pairwise sums of the level ``l`` increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mlpf import _kernels
from mlpf.models import ModelInstance


class NumericalBlowUp(FloatingPointError):
    """An Euler chain produced a non-finite state."""

    def __init__(self, step: int, level: int, chain: str = "fine"):
        super().__init__(f"non-finite state at Euler step {step} ({chain} chain, level {level})")
        self.step = step
        self.level = level
        self.chain = chain


@dataclass(frozen=True)
class Level:
    l: int
    delta: float = 1.0

    def __post_init__(self):
        if self.l < 0:
            raise ValueError("level index must be non-negative")
        if self.delta <= 0:
            raise ValueError("observation interval must be positive")

    @property
    def steps(self) -> int:
        return 1 << self.l

    @property
    def h(self) -> float:
        return math.ldexp(self.delta, -self.l)

    def coarser(self) -> "Level":
        if self.l == 0:
            raise ValueError("level 0 has no coarser level")
        return Level(self.l - 1, self.delta)


def draw_increments(rng: np.random.Generator, n_particles: int, level: Level) -> np.ndarray:
    """Standard normal increments, one row of ``level.steps`` draws per particle."""
    # drawn step-major so that each step's column is contiguous
    return rng.standard_normal((level.steps, n_particles)).T


def _euler_path(model, x, h, noise_scale, noise, n_steps, on_step=None):
    b_const = model.diffusion_model.diffusion_value
    for m in range(n_steps):
        if b_const is None:
            x = x + h * model.drift(x) + noise_scale * model.diffusion(x) * noise(m)
        else:
            x = x + h * model.drift(x) + (noise_scale * b_const) * noise(m)
        if on_step is not None:
            on_step(m, x)
    return x


def _locate_blowup(model, x, h, noise_scale, noise, n_steps, level, chain):
    def check(m, state):
        if not np.all(np.isfinite(state)):
            raise NumericalBlowUp(m, level.l, chain)

    with np.errstate(all="ignore"):
        _euler_path(model, x, h, noise_scale, noise, n_steps, check)
    raise NumericalBlowUp(n_steps - 1, level.l, chain)


def euler_transition(model: ModelInstance, level: Level, x, increments) -> np.ndarray:
    """Advance ``x`` over one observation interval with ``level.steps`` Euler steps.

    ``increments`` has shape ``(..., level.steps)`` matching ``x`` in its leading
    dimensions; exactly one column is consumed per step.
    """
    xi = np.asarray(increments, dtype=float)
    if xi.shape[-1] < level.steps:
        raise ValueError(f"need {level.steps} increments per particle, got {xi.shape[-1]}")
    x0 = np.array(x, dtype=float)
    h = level.h
    by_step = np.ascontiguousarray(np.moveaxis(xi, -1, 0))

    def noise(m):
        return by_step[m]

    with np.errstate(all="ignore"):
        out = _euler_path(model, x0, h, math.sqrt(h), noise, level.steps)
    if not np.all(np.isfinite(out)):
        _locate_blowup(model, x0, h, math.sqrt(h), noise, level.steps, level, "fine")
    return out


def coupled_euler_transition(
    model: ModelInstance, level: Level, x_fine, x_coarse, increments
) -> tuple[np.ndarray, np.ndarray]:
    """Advance a fine/coarse pair with shared Brownian increments.

    The fine chain uses step h_l with draws xi_0..xi_{k_l - 1}. The coarse chain
    uses step h_{l-1} = 2 h_l with noise sqrt(h_l) * b(X) * (xi_{2m} + xi_{2m+1}),
    whose variance is exactly h_{l-1}.
    """
    if level.l < 1:
        raise ValueError("coupled transition needs level >= 1")
    xi = np.asarray(increments, dtype=float)
    fine = euler_transition(model, level, x_fine, xi)

    h_coarse = 2.0 * level.h
    sqrt_h_fine = math.sqrt(level.h)
    xc0 = np.array(x_coarse, dtype=float)
    by_step = np.ascontiguousarray(np.moveaxis(xi, -1, 0))

    def noise(m):
        return by_step[2 * m] + by_step[2 * m + 1]

    n_steps = level.steps // 2
    with np.errstate(all="ignore"):
        coarse = _euler_path(model, xc0, h_coarse, sqrt_h_fine, noise, n_steps)
    if not np.all(np.isfinite(coarse)):
        _locate_blowup(model, xc0, h_coarse, sqrt_h_fine, noise, n_steps, level, "coarse")
    return fine, coarse


def propagate(model: ModelInstance, level: Level, x, rng: np.random.Generator, compiled: bool = True):
    """Draw increments from ``rng`` and advance ``x`` one observation interval.

    Uses the compiled kernel when the model provides one; both paths consume
    the same draws in the same order.
    """
    spec = model.diffusion_model.kernel
    if not compiled or spec is None:
        return euler_transition(model, level, x, draw_increments(rng, len(x), level))
    dk, p, bk, q = spec
    out, bad = _kernels.propagate(
        np.asarray(x, dtype=float), level.steps, level.h, math.sqrt(level.h), dk, p, bk, q, rng
    )
    if bad >= 0:
        raise NumericalBlowUp(bad, level.l, "fine")
    return out


def propagate_coupled(
    model: ModelInstance, level: Level, x_fine, x_coarse, rng: np.random.Generator, compiled: bool = True
):
    """Coupled counterpart of :func:`propagate`."""
    spec = model.diffusion_model.kernel
    if not compiled or spec is None:
        xi = draw_increments(rng, len(x_fine), level)
        return coupled_euler_transition(model, level, x_fine, x_coarse, xi)
    if level.l < 1:
        raise ValueError("coupled transition needs level >= 1")
    dk, p, bk, q = spec
    fine, coarse, bad_f, bad_c = _kernels.propagate_coupled(
        np.asarray(x_fine, dtype=float),
        np.asarray(x_coarse, dtype=float),
        level.steps,
        level.h,
        math.sqrt(level.h),
        dk,
        p,
        bk,
        q,
        rng,
    )
    if bad_f >= 0:
        raise NumericalBlowUp(bad_f, level.l, "fine")
    if bad_c >= 0:
        raise NumericalBlowUp(bad_c, level.l, "coarse")
    return fine, coarse
