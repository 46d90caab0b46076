"""Run a configured experiment: data, ground truth and the replicate sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from mlpf.estimators import allocate_section4
from mlpf.harness.config import ConfigError, ExperimentConfig
from mlpf.harness.data import generate_data, read_observations
from mlpf.harness.rates import truth_calibrated_c
from mlpf.harness.runner import ResultsTable, allocation_for, run_replicates
from mlpf.oracles import Truth, truth_for

log = logging.getLogger(__name__)


def experiment_levels(cfg: ExperimentConfig) -> tuple:
    """Finest levels to run; an epsilon target under the section4 rule fixes a single L."""
    if cfg.allocation == "section4" and cfg.epsilon is not None:
        return (allocate_section4(cfg.epsilon, cfg.allocation_C).L,)
    return tuple(cfg.levels)


def load_data(cfg: ExperimentConfig) -> np.ndarray:
    """Observations for the experiment: simulated from the model or read from file.

    A file longer than ``n_obs`` is truncated; a shorter one is an error.
    """
    model = cfg.build_model()
    if cfg.data == "generate":
        return generate_data(model, cfg.n_obs, cfg.data_seed, cfg.sim_level)
    ys = read_observations(cfg.data)
    if len(ys) < cfg.n_obs:
        raise ConfigError(f"{cfg.data} holds {len(ys)} observations, n_obs = {cfg.n_obs}")
    return ys[: cfg.n_obs]


def cache_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / "cache"


def resolve_truth(cfg: ExperimentConfig, ys, levels: Optional[tuple] = None) -> Truth:
    """Kalman truth where available, else a cached reference filter one level above the sweep."""
    levels = levels or experiment_levels(cfg)
    level_ref = cfg.reference_level if cfg.reference_level is not None else max(levels) + 1
    return truth_for(
        cfg.build_model(),
        ys,
        level_ref=level_ref,
        n_ref=cfg.reference_particles,
        seed=cfg.reference_seed,
        cache_dir=cache_dir(cfg),
    )


def run_experiment(cfg: ExperimentConfig, ys=None) -> ResultsTable:
    """All replicates of every requested estimator at each finest level of the config.

    One data set is shared by every level and replicate; only the filters are random.
    """
    cfg.validate()
    model = cfg.build_model()
    if ys is None:
        ys = load_data(cfg)
    table = ResultsTable()
    for L in experiment_levels(cfg):
        alloc = allocation_for(
            model, L, cfg.allocation, cfg.particle_scale, cfg.epsilon, cfg.allocation_C, cfg.particles
        )
        log.info("L=%d N=%s cost/replicate=%d", L, alloc.N, alloc.cost(len(ys)))
        part = run_replicates(
            model,
            ys,
            alloc,
            cfg.estimators,
            cfg.policy,
            cfg.replicates,
            cfg.seed,
            cfg.workers,
            cfg.pf_scale,
        )
        table.extend(part)
        table.metadata.setdefault("allocations", {})[L] = {"N": list(alloc.N), "rule": alloc.rule}
    table.metadata["n_obs"] = len(ys)
    return table


@dataclass
class Scaling:
    """The evidence scale constant c and where it came from."""

    c: float
    truth_calibrated: bool
    log_truth: Optional[float]
    truth_source: Optional[str]

    @property
    def log_c(self) -> float:
        return math.log(self.c)


def evidence_scaling(cfg: ExperimentConfig, truth: Optional[Truth], n: int) -> Scaling:
    log_truth = float(truth.log_evidence[n - 1]) if truth is not None else None
    source = truth.source if truth is not None else None
    if cfg.c_scale is not None:
        return Scaling(cfg.c_scale, False, log_truth, source)
    if log_truth is None:
        raise ConfigError("c_scale is unset and no truth is available to calibrate it")
    return Scaling(truth_calibrated_c(log_truth, n), True, log_truth, source)
