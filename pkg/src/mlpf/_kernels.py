"""Compiled Euler propagation for the catalog drift/diffusion families.

Draws are taken from the caller's numpy Generator in step-major order, the
same order as :func:`mlpf.discretization.draw_increments`, so both paths
consume identical streams and produce identical states.
"""

import numba as nb
import numpy as np

DRIFT_MEAN_REVERTING = 0  # p0 * (p1 - x)
DRIFT_PROPORTIONAL = 1  # p0 * x
DRIFT_STUDENT_T_LANGEVIN = 2  # -(p0 + 1) x / (2 (p0 + x^2))

DIFFUSION_CONSTANT = 0  # q0
DIFFUSION_PROPORTIONAL = 1  # q0 * x
DIFFUSION_DAMPED = 2  # q0 / sqrt(1 + x^2)


@nb.njit(cache=True, nogil=True)
def _drift(kind, p, x):
    if kind == DRIFT_MEAN_REVERTING:
        return p[0] * (p[1] - x)
    if kind == DRIFT_PROPORTIONAL:
        return p[0] * x
    return -(p[0] + 1.0) * x / (2.0 * (p[0] + x * x))


@nb.njit(cache=True, nogil=True)
def _diffusion(kind, q, x):
    if kind == DIFFUSION_CONSTANT:
        return q[0]
    if kind == DIFFUSION_PROPORTIONAL:
        return q[0] * x
    return q[0] / np.sqrt(1.0 + x * x)


@nb.njit(cache=True, nogil=True)
def propagate(x, steps, h, sqrt_h, dk, p, bk, q, rng):
    """Returns (states, first step index with a non-finite state or -1)."""
    out = x.copy()
    bad = -1
    for j in range(steps):
        for i in range(out.shape[0]):
            xi = rng.standard_normal()
            v = out[i]
            out[i] = v + h * _drift(dk, p, v) + sqrt_h * _diffusion(bk, q, v) * xi
        if bad < 0:
            for i in range(out.shape[0]):
                if not np.isfinite(out[i]):
                    bad = j
                    break
    return out, bad


@nb.njit(cache=True, nogil=True)
def propagate_coupled(xf, xc, steps, h, sqrt_h, dk, p, bk, q, rng):
    """Fine chain at step h, coarse chain at 2h driven by pairwise increment sums.

    Returns (fine, coarse, first bad fine step, first bad coarse step).
    """
    fine = xf.copy()
    coarse = xc.copy()
    acc = np.zeros(fine.shape[0])
    h_coarse = 2.0 * h
    bad_f = -1
    bad_c = -1
    for j in range(steps):
        for i in range(fine.shape[0]):
            xi = rng.standard_normal()
            v = fine[i]
            fine[i] = v + h * _drift(dk, p, v) + sqrt_h * _diffusion(bk, q, v) * xi
            acc[i] += xi
        if bad_f < 0:
            for i in range(fine.shape[0]):
                if not np.isfinite(fine[i]):
                    bad_f = j
                    break
        if j % 2 == 1:
            for i in range(coarse.shape[0]):
                v = coarse[i]
                coarse[i] = v + h_coarse * _drift(dk, p, v) + sqrt_h * _diffusion(bk, q, v) * acc[i]
                acc[i] = 0.0
            if bad_c < 0:
                for i in range(coarse.shape[0]):
                    if not np.isfinite(coarse[i]):
                        bad_c = j // 2
                        break
    return fine, coarse, bad_f, bad_c
