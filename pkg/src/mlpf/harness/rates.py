"""Log-log rate fits: variance decay across levels and cost versus MSE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from mlpf.harness.runner import ResultsTable


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    x: tuple
    y: tuple


def fit_line(x: Sequence[float], y: Sequence[float]) -> RateFit:
    """Ordinary least squares of y on x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("need at least 3 points for a rate fit")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("rate fit needs finite points")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(slope, intercept, r2, tuple(x.tolist()), tuple(y.tolist()))


def scale_nc(log_estimates, c: float, n: int):
    """Multiply evidence estimates (given as logs) by c**n."""
    if c <= 0:
        raise ValueError("c must be positive")
    return np.asarray(log_estimates, dtype=float) + n * math.log(c)


def truth_calibrated_c(truth_log_evidence: float, n: int) -> float:
    """The c for which the scaled truth equals one."""
    return math.exp(-truth_log_evidence / n)


def estimate_variance_rate(per_level_variances: Sequence[float], levels: Sequence[int]) -> RateFit:
    """Slope of log2(variance) against log2(h_l) = -l."""
    v = np.asarray(per_level_variances, dtype=float)
    if np.any(v <= 0):
        raise ValueError("zero variance at some level")
    return fit_line(-np.asarray(levels, dtype=float), np.log2(v))


def scaled_values(rows, log_truth: float) -> np.ndarray:
    """Estimates divided by the truth, so the scaled truth is exactly 1."""
    return np.array([r.sign * math.exp(r.log_estimate - log_truth) if r.sign else 0.0 for r in rows])


def mse_by_level(results: ResultsTable, estimator: str, log_truth: float) -> dict:
    """{L: (mean cost, MSE of scaled estimate)} for one estimator."""
    out = {}
    for L in sorted({r.L for r in results.select(estimator)}):
        rows = results.select(estimator, L)
        vals = scaled_values(rows, log_truth)
        out[L] = (float(np.mean([r.cost for r in rows])), float(np.mean((vals - 1.0) ** 2)))
    return out


def estimate_cost_rate(results: ResultsTable, log_truth: float) -> Mapping[str, RateFit]:
    """Per estimator, OLS slope of log(cost) on log(MSE) across L."""
    fits = {}
    for estimator in sorted({r.estimator for r in results.rows}):
        table = mse_by_level(results, estimator, log_truth)
        if len(table) < 3:
            raise ValueError(f"{estimator}: need results at >= 3 values of L")
        costs = [c for c, _ in table.values()]
        mses = [m for _, m in table.values()]
        if any(m <= 0 for m in mses):
            raise ValueError(f"{estimator}: zero MSE")
        fits[estimator] = fit_line(np.log(mses), np.log(costs))
    return fits
