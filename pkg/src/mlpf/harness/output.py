"""CSV, JSON and SVG outputs of an experiment.

Every writer is byte-deterministic for identical inputs: floats are written
with ``repr``, rows keep run order and the SVG writer pins matplotlib's id
salt and drops the timestamp.

results.csv  replicate,estimator,L,log_estimate,sign,cost,wall_ms
levels.csv   replicate,L,level,n_particles,time,log_nc_fine,log_nc_coarse,mean_alpha,resample_count
rates.csv    kind,target,slope,intercept,r2,n_points
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mlpf.harness.rates import RateFit, estimate_cost_rate, estimate_variance_rate, mse_by_level
from mlpf.harness.runner import ResultRow, ResultsTable

RESULTS_HEADER = ("replicate", "estimator", "L", "log_estimate", "sign", "cost", "wall_ms")
LEVELS_HEADER = (
    "replicate",
    "L",
    "level",
    "n_particles",
    "time",
    "log_nc_fine",
    "log_nc_coarse",
    "mean_alpha",
    "resample_count",
)
RATES_HEADER = ("kind", "target", "slope", "intercept", "r2", "n_points")


def _num(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: os.PathLike, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def format_results(table: ResultsTable, record_wall_time: bool = False) -> str:
    """results.csv text; ``wall_ms`` stays empty unless asked for, to keep files reproducible."""
    rows = (
        (
            r.replicate,
            r.estimator,
            r.L,
            _num(r.log_estimate),
            r.sign,
            r.cost,
            _num(r.wall_ms) if record_wall_time else "",
        )
        for r in table.rows
    )
    return _csv_text(RESULTS_HEADER, rows)


def write_results(path, table: ResultsTable, record_wall_time: bool = False) -> Path:
    return _write(path, format_results(table, record_wall_time))


def read_results(path) -> ResultsTable:
    table = ResultsTable()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULTS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(RESULTS_HEADER)}")
        for rec in reader:
            rep, est, L, loge, sign, cost, wall = rec
            table.rows.append(
                ResultRow(int(rep), est, int(L), float(loge), int(sign), int(cost), float(wall) if wall else None)
            )
    return table


def format_timings(table: ResultsTable) -> str:
    rows = ((r.replicate, r.estimator, r.L, _num(r.wall_ms)) for r in table.rows)
    return _csv_text(("replicate", "estimator", "L", "wall_ms"), rows)


def level_times(n_obs: int, rate_times: Sequence[int]) -> list:
    """Recorded times: the configured ones that fit in the data, plus the final time."""
    return sorted({t for t in rate_times if 1 <= t <= n_obs} | {n_obs})


def format_levels(table: ResultsTable, times: Sequence[int]) -> str:
    rows = []
    for L, rep, levels in table.levels:
        for est in levels:
            for t in times:
                coarse = est.log_nc_trace_coarse[t - 1] if est.l > 0 else None
                alpha = None if math.isnan(est.mean_alpha) else est.mean_alpha
                rows.append(
                    (
                        rep,
                        L,
                        est.l,
                        est.n_particles,
                        t,
                        _num(est.log_nc_trace_fine[t - 1]),
                        _num(coarse),
                        _num(alpha),
                        est.resample_count,
                    )
                )
    return _csv_text(LEVELS_HEADER, rows)


@dataclass(frozen=True)
class LevelRecord:
    replicate: int
    L: int
    level: int
    n_particles: int
    time: int
    log_nc_fine: float
    log_nc_coarse: Optional[float]


def read_levels(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LEVELS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LEVELS_HEADER)}")
        for r in reader:
            out.append(
                LevelRecord(
                    int(r["replicate"]),
                    int(r["L"]),
                    int(r["level"]),
                    int(r["n_particles"]),
                    int(r["time"]),
                    float(r["log_nc_fine"]),
                    float(r["log_nc_coarse"]) if r["log_nc_coarse"] else None,
                )
            )
    return out


def level_records(table: ResultsTable, times: Sequence[int]) -> list:
    return [
        LevelRecord(
            rep,
            L,
            est.l,
            est.n_particles,
            t,
            float(est.log_nc_trace_fine[t - 1]),
            float(est.log_nc_trace_coarse[t - 1]) if est.l > 0 else None,
        )
        for L, rep, levels in table.levels
        for est in levels
        for t in times
    ]


def level_difference_variances(records: Sequence[LevelRecord], time: int, log_scale: float) -> dict:
    """{l: var over replicates of c^t (fine evidence - coarse evidence)} at level l >= 1.

    Uses the runs with the largest finest level, which contain every level.
    ``log_scale`` is -t log c; it shifts all variances by a common factor only.
    """
    recs = [r for r in records if r.time == time and r.level > 0]
    if not recs:
        return {}
    top = max(r.L for r in recs)
    by_level = {}
    for r in recs:
        if r.L != top:
            continue
        d = math.exp(r.log_nc_fine - log_scale) - math.exp(r.log_nc_coarse - log_scale)
        by_level.setdefault(r.level, []).append(d)
    return {l: float(np.var(v, ddof=1)) for l, v in sorted(by_level.items()) if len(v) > 1}


def default_log_scale(records: Sequence[LevelRecord], time: int) -> float:
    """Mean level-0 log evidence at ``time``: keeps scaled values near one when no truth is given."""
    vals = [r.log_nc_fine for r in records if r.time == time and r.level == 0]
    return float(np.mean(vals)) if vals else 0.0


@dataclass(frozen=True)
class RateRow:
    kind: str
    target: str
    fit: RateFit


def variance_rates(records: Sequence[LevelRecord], log_truths: dict) -> list:
    """Variance-rate fits per recorded time; ``log_truths`` maps time to the scaled-truth log."""
    rows = []
    for t in sorted({r.time for r in records}):
        scale = log_truths.get(t, default_log_scale(records, t))
        var = level_difference_variances(records, t, scale)
        if len(var) < 3 or any(v <= 0 for v in var.values()):
            continue
        rows.append(RateRow("variance", f"time={t}", estimate_variance_rate(list(var.values()), list(var))))
    return rows


def cost_rates(table: ResultsTable, log_truth: float) -> list:
    fits = estimate_cost_rate(table, log_truth)
    return [RateRow("cost", name, fit) for name, fit in sorted(fits.items())]


def format_rates(rows: Sequence[RateRow]) -> str:
    return _csv_text(
        RATES_HEADER,
        ((r.kind, r.target, _num(r.fit.slope), _num(r.fit.intercept), _num(r.fit.r2), len(r.fit.x)) for r in rows),
    )


def write_rates(path, rows: Sequence[RateRow]) -> Path:
    return _write(path, format_rates(rows))


def write_metadata(path, doc: dict) -> Path:
    return _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "mlpf"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def plot_variance(path, records: Sequence[LevelRecord], log_truths: dict, delta: float = 1.0) -> Path:
    """log2 variance of the level differences against log2 h_l, one line per time."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    for t in sorted({r.time for r in records}):
        var = level_difference_variances(records, t, log_truths.get(t, default_log_scale(records, t)))
        if not var:
            continue
        ls = np.array(list(var))
        ax.plot(np.log2(delta) - ls, np.log2(list(var.values())), marker="o", label=f"n={t}")
    ax.set_xlabel("log2 h_l")
    ax.set_ylabel("log2 variance")
    ax.legend()
    fig.tight_layout()
    try:
        return _save_svg(fig, path)
    finally:
        plt.close(fig)


def plot_cost(path, table: ResultsTable, log_truth: float) -> Path:
    """log cost against log MSE of the scaled evidence, one line per estimator."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    for name in sorted({r.estimator for r in table.rows}):
        pts = mse_by_level(table, name, log_truth)
        mses = [m for _, m in pts.values()]
        costs = [c for c, _ in pts.values()]
        if any(m <= 0 for m in mses):
            continue
        ax.plot(np.log(mses), np.log(costs), marker="o", label=name)
    ax.set_xlabel("log MSE")
    ax.set_ylabel("log cost")
    ax.legend()
    fig.tight_layout()
    try:
        return _save_svg(fig, path)
    finally:
        plt.close(fig)


def emit_outputs(
    out_dir,
    table: ResultsTable,
    rate_rows: Sequence[RateRow] = (),
    records: Sequence[LevelRecord] = (),
    log_truths: Optional[dict] = None,
    log_truth: Optional[float] = None,
    delta: float = 1.0,
    times: Sequence[int] = (),
    record_wall_time: bool = False,
) -> list:
    """Write results.csv, levels.csv, timings.csv, rates.csv and the SVG plots that apply."""
    out = Path(out_dir)
    written = [write_results(out / "results.csv", table, record_wall_time)]
    written.append(_write(out / "timings.csv", format_timings(table)))
    if table.levels and times:
        written.append(_write(out / "levels.csv", format_levels(table, times)))
    written.append(write_rates(out / "rates.csv", rate_rows))
    log_truths = log_truths or {}
    if any(r.kind == "variance" for r in rate_rows):
        written.append(plot_variance(out / "variance_vs_h.svg", records, log_truths, delta))
    if log_truth is not None and any(r.kind == "cost" for r in rate_rows):
        written.append(plot_cost(out / "cost_vs_mse.svg", table, log_truth))
    return written
