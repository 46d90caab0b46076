"""Experiment configuration: a flat ``key = value`` text format.

Lines starting with ``#`` are comments. Model constants are given as
``<model>.<name>``, e.g. ``ou.theta = 1.5``. Keys:

=====================  ==========================================================
model                  ou | gbm | langevin | nlm
n_obs                  number of observations
levels                 finest level L; a single value ``3``, a range ``1-6`` or a
                       list ``1,3,5``
epsilon                target accuracy (allocation = section4 only; sets L)
allocation             section5 | section4 | fixed
allocation_C           constant C of the section4 rule
particle_scale         multiplier on N_{0,L} (section5) or on all N_l (section4)
particles              per-level particle count for allocation = fixed
pf_scale               single-level comparison filter uses pf_scale * 4^L particles
estimators             comma list of single, ml-unbiased, ml-biased (or ``all``)
resample               always | adaptive | adaptive(<fraction>)
replicates             number of independent filter replicates
seed                   master seed for filter randomness
data                   ``generate`` or a path to an observations CSV (k,y)
data_seed              seed for generated data
sim_level              Euler level used to simulate generated data
out                    output directory
c_scale                evidence scale constant c (default: truth-calibrated)
reference_level        level of the reference filter (default: max L + 1)
reference_particles    particles of the reference filter
reference_seed         seed of the reference filter
rate_times             comma list of times at which level evidences are recorded
workers                worker threads
record_wall_time       write wall-clock times into results.csv (breaks byte determinism)
nlm.observation        laplace | lognormal
=====================  ==========================================================
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

from mlpf.harness.runner import ESTIMATORS
from mlpf.models import CATALOG, get_model
from mlpf.smc import ResamplePolicy


class ConfigError(ValueError):
    pass


def parse_levels(text: str) -> tuple:
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = (int(t) for t in text.split("-", 1))
        if hi < lo:
            raise ConfigError(f"empty level range {text!r}")
        return tuple(range(lo, hi + 1))
    return tuple(int(t) for t in text.split(",") if t.strip())


def format_levels(levels) -> str:
    levels = tuple(levels)
    if len(levels) > 1 and levels == tuple(range(levels[0], levels[-1] + 1)):
        return f"{levels[0]}-{levels[-1]}"
    return ",".join(str(l) for l in levels)


def parse_estimators(text: str) -> tuple:
    names = [t.strip() for t in text.split(",") if t.strip()]
    if names == ["all"]:
        return ESTIMATORS
    for name in names:
        if name not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {name!r}; choose from {ESTIMATORS} or 'all'")
    return tuple(e for e in ESTIMATORS if e in names)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip() in ("", "none") else float(text)


def _opt_int(text: str):
    return None if text.strip() in ("", "none") else int(text)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "ou"
    constants: Mapping[str, float] = field(default_factory=dict)
    nlm_observation: str = "laplace"
    n_obs: int = 1000
    levels: tuple = (3,)
    epsilon: Optional[float] = None
    allocation: str = "section5"
    allocation_C: float = 1.0
    particle_scale: float = 1.0
    particles: int = 1000
    pf_scale: float = 1.0
    estimators: tuple = ESTIMATORS
    resample: str = "adaptive(0.25)"
    replicates: int = 20
    seed: int = 0
    data: str = "generate"
    data_seed: int = 1
    sim_level: int = 12
    out: str = "results"
    c_scale: Optional[float] = None
    reference_level: Optional[int] = None
    reference_particles: int = 100_000
    reference_seed: int = 0
    rate_times: tuple = (100, 500, 1000)
    workers: int = 1
    record_wall_time: bool = False

    # key -> (attribute, parser, formatter)
    _SCALARS = {
        "model": (str, str),
        "n_obs": (int, str),
        "levels": (parse_levels, format_levels),
        "epsilon": (_opt_float, lambda v: "none" if v is None else repr(v)),
        "allocation": (str, str),
        "allocation_C": (float, repr),
        "particle_scale": (float, repr),
        "particles": (int, str),
        "pf_scale": (float, repr),
        "estimators": (parse_estimators, lambda v: ",".join(v)),
        "resample": (lambda t: str(ResamplePolicy.parse(t.strip())), str),
        "replicates": (int, str),
        "seed": (int, str),
        "data": (str, str),
        "data_seed": (int, str),
        "sim_level": (int, str),
        "out": (str, str),
        "c_scale": (_opt_float, lambda v: "none" if v is None else repr(v)),
        "reference_level": (_opt_int, lambda v: "none" if v is None else str(v)),
        "reference_particles": (int, str),
        "reference_seed": (int, str),
        "rate_times": (lambda t: tuple(int(x) for x in t.split(",") if x.strip()), lambda v: ",".join(map(str, v))),
        "workers": (int, str),
        "record_wall_time": (_bool, lambda v: "true" if v else "false"),
    }

    def validate(self) -> "ExperimentConfig":
        if self.model not in CATALOG:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(CATALOG)}")
        try:
            self.build_model()
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.n_obs < 1:
            raise ConfigError("n_obs must be >= 1")
        if self.allocation not in ("section5", "section4", "fixed"):
            raise ConfigError(f"unknown allocation rule {self.allocation!r}")
        if self.allocation == "section4" and self.epsilon is not None and not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not self.levels or any(l < 0 for l in self.levels):
            raise ConfigError("levels must be non-negative and non-empty")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.particle_scale <= 0 or self.pf_scale <= 0 or self.particles < 1:
            raise ConfigError("particle counts and scales must be positive")
        if not self.estimators:
            raise ConfigError("no estimators selected")
        if self.c_scale is not None and self.c_scale <= 0:
            raise ConfigError("c_scale must be positive")
        if self.reference_level is not None and self.reference_level < max(self.levels) + 1:
            raise ConfigError("reference_level must exceed the finest experiment level")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.data != "generate" and not os.path.exists(self.data):
            raise ConfigError(f"observations file not found: {self.data}")
        return self

    def build_model(self):
        options = {"observation": self.nlm_observation} if self.model == "nlm" else {}
        return get_model(self.model, self.constants, **options)

    @property
    def policy(self) -> ResamplePolicy:
        return ResamplePolicy.parse(self.resample)

    @property
    def max_level(self) -> int:
        return max(self.levels)

    def ref_level(self) -> int:
        return self.reference_level if self.reference_level is not None else self.max_level + 1

    def to_text(self) -> str:
        lines = []
        for key, (_, fmt) in self._SCALARS.items():
            lines.append(f"{key} = {fmt(getattr(self, key))}")
        for name, value in sorted(self.constants.items()):
            lines.append(f"{self.model}.{name} = {value!r}")
        lines.append(f"nlm.observation = {self.nlm_observation}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, pairs: Mapping[str, str]) -> "ExperimentConfig":
        return from_pairs(pairs, base=self)


def from_pairs(pairs: Mapping[str, str], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Apply textual ``key -> value`` settings on top of ``base``."""
    cfg = base or ExperimentConfig()
    updates = {}
    constants = dict(cfg.constants)
    model = pairs.get("model", cfg.model).strip()
    for key, raw in pairs.items():
        key = key.strip()
        raw = raw.strip()
        if key in ExperimentConfig._SCALARS:
            parse, _ = ExperimentConfig._SCALARS[key]
            try:
                updates[key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        elif key == "nlm.observation":
            updates["nlm_observation"] = raw
        elif "." in key:
            prefix, name = key.split(".", 1)
            if prefix not in CATALOG:
                raise ConfigError(f"unknown config key {key!r}")
            if prefix == model:
                constants[name] = float(raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if model != cfg.model and not any(k.startswith(model + ".") for k in pairs):
        constants = {}
    updates["constants"] = constants
    return replace(cfg, **updates)


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return from_pairs(pairs, base)


def load_config(path: os.PathLike, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), base)
