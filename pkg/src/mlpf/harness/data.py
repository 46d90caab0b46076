"""Synthetic observation generation and the observations CSV format (``k,y``)."""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from mlpf.discretization import Level, propagate
from mlpf.models import ModelInstance
from mlpf.rng import DATA_STREAM, stream

DEFAULT_SIM_LEVEL = 12


def generate_data(
    model: ModelInstance, n_obs: int, seed: int = 0, sim_level: int = DEFAULT_SIM_LEVEL
) -> np.ndarray:
    """Simulate the latent path at a fine Euler level and observe it at each interval."""
    if n_obs < 1:
        raise ValueError("n_obs must be at least 1")
    rng = stream(seed, DATA_STREAM, sim_level)
    level = Level(sim_level, model.obs_interval)
    x = np.array([float(model.x0)])
    ys = np.empty(n_obs)
    for k in range(n_obs):
        x = propagate(model, level, x, rng)
        ys[k] = model.sample_observation(float(x[0]), rng)
    return ys


def format_observations(ys) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("k", "y"))
    for k, y in enumerate(ys, start=1):
        writer.writerow((k, repr(float(y))))
    return buf.getvalue()


def write_observations(path: os.PathLike, ys) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_observations(ys))
    return path


def read_observations(path: os.PathLike) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["k", "y"]:
            raise ValueError(f"{path}: expected header 'k,y'")
        rows = [(int(r["k"]), float(r["y"])) for r in reader]
    ks = [k for k, _ in rows]
    if ks != list(range(1, len(rows) + 1)):
        raise ValueError(f"{path}: observation indices must run 1..n in order")
    return np.array([y for _, y in rows])
