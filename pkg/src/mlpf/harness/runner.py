"""Replicated multilevel and single-level filter runs."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mlpf.discretization import Level, NumericalBlowUp
from mlpf.estimators import (
    Allocation,
    LevelEstimates,
    SignedLog,
    allocate_section4,
    allocate_section5,
    nc_ml_biased,
    nc_ml_unbiased,
)
from mlpf.models import ModelInstance
from mlpf.rng import MLPF_STREAM, PF_STREAM, stream
from mlpf.smc import (
    CoupledCloud,
    ParticleCloud,
    ParticleDeath,
    ResamplePolicy,
    cpf_step,
    filter_estimate,
    filter_increment_estimate,
    pf_step,
)

log = logging.getLogger(__name__)

ESTIMATORS = ("single", "ml-unbiased", "ml-biased")
MAX_FAILURE_FRACTION = 0.05


def run_level(
    model: ModelInstance,
    ys: Sequence[float],
    l: int,
    n_particles: int,
    policy: ResamplePolicy,
    rng: np.random.Generator,
) -> LevelEstimates:
    """Run the level-l filter of a multilevel run over all observations.

    Level 0 is a plain particle filter; higher levels run the coupled filter.
    """
    n_obs = len(ys)
    increments = np.empty(n_obs)
    trace_fine = np.empty(n_obs)
    level = Level(l, model.obs_interval)
    phi = model.test_function
    if l == 0:
        cloud = ParticleCloud.initial(model.x0, n_particles)
        for k, y in enumerate(ys):
            pf_step(cloud, float(y), model, level, policy, rng)
            increments[k] = filter_estimate(cloud, phi)
            trace_fine[k] = cloud.log_nc
        return LevelEstimates(
            0,
            n_particles,
            cloud.log_nc,
            None,
            increments,
            LevelEstimates.level_cost(0, n_particles, n_obs),
            resample_count=cloud.resample_count,
            log_nc_trace_fine=trace_fine,
        )

    trace_coarse = np.empty(n_obs)
    coupled = CoupledCloud.initial(model.x0, level, n_particles)
    for k, y in enumerate(ys):
        cpf_step(coupled, float(y), model, policy, rng)
        increments[k] = filter_increment_estimate(coupled, phi)
        trace_fine[k] = coupled.fine.log_nc
        trace_coarse[k] = coupled.coarse.log_nc
    return LevelEstimates(
        l,
        n_particles,
        coupled.fine.log_nc,
        coupled.coarse.log_nc,
        increments,
        LevelEstimates.level_cost(l, n_particles, n_obs),
        mean_alpha=float(np.mean(coupled.alphas)) if coupled.alphas else float("nan"),
        resample_count=coupled.fine.resample_count,
        log_nc_trace_fine=trace_fine,
        log_nc_trace_coarse=trace_coarse,
    )


def run_pf(
    model: ModelInstance,
    ys: Sequence[float],
    l: int,
    n_particles: int,
    policy: ResamplePolicy,
    rng: np.random.Generator,
) -> LevelEstimates:
    """Standalone particle filter at level ``l``; returned as a single-level estimate."""
    level = Level(l, model.obs_interval)
    cloud = ParticleCloud.initial(model.x0, n_particles)
    means = np.empty(len(ys))
    for k, y in enumerate(ys):
        pf_step(cloud, float(y), model, level, policy, rng)
        means[k] = filter_estimate(cloud, model.test_function)
    return LevelEstimates(
        l,
        n_particles,
        cloud.log_nc,
        None,
        means,
        n_particles * level.steps * len(ys),
        resample_count=cloud.resample_count,
    )


def pf_particles(L: int, scale: float = 1.0) -> int:
    """Particle count of the single-level comparison filter at level L: scale * 4^L."""
    return max(1, int(math.floor(scale * 4.0**L)))


@dataclass
class ResultRow:
    replicate: int
    estimator: str
    L: int
    log_estimate: float
    sign: int
    cost: int
    wall_ms: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def value(self) -> SignedLog:
        return SignedLog(self.sign, self.log_estimate)


@dataclass
class ResultsTable:
    """Estimator rows plus, for multilevel runs, the per-level outputs.

    ``levels`` holds ``(L, replicate, [LevelEstimates, ...])`` in run order.
    """

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    levels: list = field(default_factory=list)

    def select(self, estimator: Optional[str] = None, L: Optional[int] = None) -> list:
        return [
            r
            for r in self.rows
            if (estimator is None or r.estimator == estimator) and (L is None or r.L == L)
        ]

    def extend(self, other: "ResultsTable") -> None:
        self.rows.extend(other.rows)
        self.failures.extend(other.failures)
        self.levels.extend(other.levels)


@dataclass
class ReplicateOutput:
    replicate: int
    levels: Optional[list] = None
    pf: Optional[LevelEstimates] = None
    wall_ms: dict = field(default_factory=dict)
    error: Optional[str] = None


def allocation_for(
    model: ModelInstance, L: int, rule: str, scale: float = 1.0, epsilon=None, C=1.0, particles=1000
) -> Allocation:
    """Per-level particle counts for a run with finest level ``L``.

    ``fixed`` puts ``particles`` on every level, which isolates the per-level
    variance decay from the allocation.
    """
    if rule == "fixed":
        return Allocation(L, (int(particles),) * (L + 1), "fixed")
    if rule == "section5":
        return allocate_section5(L, model.beta, 1, scale)
    if rule == "section4":
        if epsilon is None:
            epsilon = 2.0 ** (-L)
        alloc = allocate_section4(epsilon, C)
        return alloc.scaled(scale) if scale != 1.0 else alloc
    raise ValueError(f"unknown allocation rule {rule!r}")


def run_replicate(
    model: ModelInstance,
    ys: Sequence[float],
    allocation: Allocation,
    estimators: Sequence[str],
    policy: ResamplePolicy,
    seed: int,
    replicate: int,
    pf_scale: float = 1.0,
) -> ReplicateOutput:
    """One replicate: every requested filter, each on its own keyed stream."""
    L = allocation.L
    out = ReplicateOutput(replicate)
    try:
        if any(e.startswith("ml-") for e in estimators):
            t0 = time.perf_counter()
            out.levels = [
                run_level(model, ys, l, n, policy, stream(seed, L, replicate, l, MLPF_STREAM))
                for l, n in enumerate(allocation.N)
            ]
            out.wall_ms["mlpf"] = 1000.0 * (time.perf_counter() - t0)
        if "single" in estimators:
            t0 = time.perf_counter()
            out.pf = run_pf(
                model, ys, L, pf_particles(L, pf_scale), policy, stream(seed, L, replicate, 0, PF_STREAM)
            )
            out.wall_ms["single"] = 1000.0 * (time.perf_counter() - t0)
    except (ParticleDeath, NumericalBlowUp) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def rows_for(out: ReplicateOutput, L: int, estimators: Sequence[str]) -> list:
    rows = []
    for name in estimators:
        if name == "single":
            rows.append(
                ResultRow(out.replicate, name, L, out.pf.log_nc_fine, 1, out.pf.cost, out.wall_ms["single"])
            )
            continue
        cost = sum(est.cost for est in out.levels)
        diag = {
            "N": [est.n_particles for est in out.levels],
            "mean_alpha": [est.mean_alpha for est in out.levels],
            "resample_count": [est.resample_count for est in out.levels],
        }
        if name == "ml-unbiased":
            value = nc_ml_unbiased(out.levels)
        elif name == "ml-biased":
            value = SignedLog.from_log(nc_ml_biased(out.levels))
        else:
            raise ValueError(f"unknown estimator {name!r}")
        rows.append(
            ResultRow(out.replicate, name, L, value.log_abs, value.sign, cost, out.wall_ms["mlpf"], diag)
        )
    return rows


def run_replicates(
    model: ModelInstance,
    ys: Sequence[float],
    allocation: Allocation,
    estimators: Sequence[str] = ESTIMATORS,
    policy: ResamplePolicy = ResamplePolicy("adaptive"),
    replicates: int = 20,
    seed: int = 0,
    workers: int = 1,
    pf_scale: float = 1.0,
) -> ResultsTable:
    """Replicate the requested estimators at a fixed allocation.

    Results do not depend on ``workers``: every filter draws from a stream keyed
    by (seed, L, replicate, level, kind) and rows are assembled in replicate order.
    """
    estimators = tuple(e for e in ESTIMATORS if e in estimators)

    def task(r):
        return run_replicate(model, ys, allocation, estimators, policy, seed, r, pf_scale)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(task, range(replicates)))
    else:
        outputs = [task(r) for r in range(replicates)]

    table = ResultsTable()
    for out in outputs:
        if out.error is not None:
            log.warning("replicate %d failed: %s", out.replicate, out.error)
            table.failures.append((allocation.L, out.replicate, out.error))
            continue
        table.rows.extend(rows_for(out, allocation.L, estimators))
        if out.levels is not None:
            table.levels.append((allocation.L, out.replicate, out.levels))
    if len(table.failures) > MAX_FAILURE_FRACTION * replicates:
        raise RuntimeError(
            f"{len(table.failures)} of {replicates} replicates failed at L={allocation.L}: "
            f"{table.failures[0][2]}"
        )
    return table
