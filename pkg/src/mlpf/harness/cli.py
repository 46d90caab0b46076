"""Command line entry point.

    mlpf generate --model ou --n-obs 1000 --out data/ou.csv
    mlpf run      --model ou --levels 3 --replicates 20 --out results/ou
    mlpf sweep    --model ou --levels 1-6 --out results/ou
    mlpf rates    --out results/ou
    mlpf oracle   --model ou --data data/ou.csv --out results/ou

Settings are resolved as built-in defaults, then the ``--config`` file, then
``--set key=value`` pairs, then the dedicated flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from mlpf.harness import output
from mlpf.harness.config import ConfigError, ExperimentConfig, from_pairs, load_config, parse_config
from mlpf.harness.data import generate_data, write_observations
from mlpf.harness.experiment import (
    evidence_scaling,
    experiment_levels,
    load_data,
    resolve_truth,
    run_experiment,
)
from mlpf.oracles import data_hash

log = logging.getLogger("mlpf")

SWEEP_DEFAULTS = {"levels": "1-6"}

# flag dest -> config key
_FLAG_KEYS = {
    "model": "model",
    "seed": "seed",
    "levels": "levels",
    "replicates": "replicates",
    "estimator": "estimators",
    "resample": "resample",
    "out": "out",
    "workers": "workers",
    "n_obs": "n_obs",
    "data": "data",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--model", choices=("ou", "gbm", "langevin", "nlm"))
    p.add_argument("--seed", type=int, help="master seed of the filters (data seed for generate)")
    p.add_argument("--n-obs", dest="n_obs", type=int)
    p.add_argument("--data", help="'generate' or an observations CSV")
    p.add_argument("--out", help="output directory (file for generate)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("-v", "--verbose", action="store_true")


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--levels", help="finest level(s): 3, 1-6 or 1,3,5")
    p.add_argument("--replicates", type=int)
    p.add_argument("--estimator", choices=("single", "ml-unbiased", "ml-biased", "all"))
    p.add_argument("--resample", choices=("always", "adaptive"))
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlpf", description="Multilevel particle filter experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate observations and write them as CSV (k,y)")
    _common(p)
    p.add_argument("--sim-level", dest="sim_level", type=int)

    for name, text in (("run", "run one experiment"), ("sweep", "run a range of L, then fit rates and plot")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _run_flags(p)

    p = sub.add_parser("rates", help="fit cost and variance rates from an output directory")
    p.add_argument("--out", required=True, help="directory holding results.csv and metadata.json")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("oracle", help="compute Kalman or reference-filter truth for a data set")
    _common(p)
    p.add_argument("--levels", help="sweep levels; the reference filter runs one level above")
    return parser


def _parse_set(items) -> dict:
    pairs = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def resolve_config(args, defaults=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if defaults:
        cfg = from_pairs(defaults, cfg)
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    cfg = from_pairs(_parse_set(getattr(args, "overrides", [])), cfg)
    flags = {}
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            flags[key] = str(value)
    if getattr(args, "sim_level", None) is not None:
        flags["sim_level"] = str(args.sim_level)
    return from_pairs(flags, cfg) if flags else cfg


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    if args.seed is not None:
        cfg = from_pairs({"data_seed": str(args.seed)}, cfg)
    ys = generate_data(cfg.build_model(), cfg.n_obs, cfg.data_seed, cfg.sim_level)
    target = Path(args.out) if args.out else Path(f"{cfg.model}_observations.csv")
    if target.suffix != ".csv":
        target = target / "observations.csv"
    write_observations(target, ys)
    print(f"wrote {len(ys)} observations to {target}")
    return 0


def _scaling_doc(cfg, truth, n, times):
    scaling = evidence_scaling(cfg, truth, n)
    doc = {
        "c": scaling.c,
        "c_truth_calibrated": scaling.truth_calibrated,
        "truth_source": scaling.truth_source,
        "log_truth": scaling.log_truth,
        "log_truth_by_time": (
            {str(t): float(truth.log_evidence[t - 1]) for t in times} if truth is not None else {}
        ),
    }
    return scaling, doc


def _experiment(args, defaults=None, fit_rates=False) -> int:
    cfg = resolve_config(args, defaults).validate()
    out = Path(cfg.out)
    ys = load_data(cfg)
    if cfg.data == "generate":
        write_observations(out / "observations.csv", ys)
    levels = experiment_levels(cfg)
    table = run_experiment(cfg, ys)
    n = len(ys)
    times = output.level_times(n, cfg.rate_times)

    truth = None
    if fit_rates or cfg.c_scale is None:
        truth = resolve_truth(cfg, ys, levels)
    scaling, scale_doc = _scaling_doc(cfg, truth, n, times)

    rate_rows = []
    records = output.level_records(table, times)
    log_truths = {int(t): v for t, v in scale_doc["log_truth_by_time"].items()}
    if fit_rates:
        log_target = -n * scaling.log_c
        if len(levels) >= 3:
            rate_rows += output.cost_rates(table, log_target)
        rate_rows += output.variance_rates(records, log_truths)
    output.emit_outputs(
        out,
        table,
        rate_rows,
        records,
        log_truths,
        -n * scaling.log_c,
        cfg.build_model().obs_interval,
        times,
        cfg.record_wall_time,
    )
    meta = {
        "config": cfg.to_text(),
        "n_obs": n,
        "data_sha256": data_hash(ys),
        "levels": list(levels),
        "allocations": {str(k): v for k, v in table.metadata.get("allocations", {}).items()},
        "failures": [list(f) for f in table.failures],
        "rate_times": times,
        **scale_doc,
    }
    output.write_metadata(out / "metadata.json", meta)
    for r in rate_rows:
        print(f"{r.kind:8s} {r.target:12s} slope={r.fit.slope:+.3f} r2={r.fit.r2:.3f}")
    print(f"wrote {len(table.rows)} result rows to {out / 'results.csv'}")
    return 0


def cmd_run(args) -> int:
    return _experiment(args)


def cmd_sweep(args) -> int:
    return _experiment(args, SWEEP_DEFAULTS, fit_rates=True)


def cmd_rates(args) -> int:
    out = Path(args.out)
    meta = json.loads((out / "metadata.json").read_text())
    table = output.read_results(out / "results.csv")
    log_truths = {int(t): v for t, v in meta.get("log_truth_by_time", {}).items()}
    n = meta["n_obs"]
    log_target = -n * math.log(meta["c"])
    rows = []
    if len({r.L for r in table.rows}) >= 3:
        rows += output.cost_rates(table, log_target)
    records = output.read_levels(out / "levels.csv") if (out / "levels.csv").exists() else []
    rows += output.variance_rates(records, log_truths)
    output.write_rates(out / "rates.csv", rows)
    if records and any(r.kind == "variance" for r in rows):
        delta = parse_config(meta["config"]).build_model().obs_interval
        output.plot_variance(out / "variance_vs_h.svg", records, log_truths, delta)
    if any(r.kind == "cost" for r in rows):
        output.plot_cost(out / "cost_vs_mse.svg", table, log_target)
    for r in rows:
        print(f"{r.kind:8s} {r.target:12s} slope={r.fit.slope:+.3f} r2={r.fit.r2:.3f}")
    return 0


def cmd_oracle(args) -> int:
    cfg = resolve_config(args).validate()
    ys = load_data(cfg)
    truth = resolve_truth(cfg, ys)
    out = Path(cfg.out)
    doc = {
        "source": truth.source,
        "data_sha256": data_hash(ys),
        "log_evidence": [repr(float(v)) for v in truth.log_evidence],
        "filter_means": [repr(float(v)) for v in truth.filter_means],
    }
    output.write_metadata(out / "truth.json", doc)
    print(f"{truth.source}: log p(y_1:{len(ys)}) = {float(truth.log_evidence[-1])!r}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "rates": cmd_rates,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"mlpf {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
