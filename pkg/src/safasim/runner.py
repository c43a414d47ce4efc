"""Experiment orchestration: single runs, sweeps and bias tables."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from .bias import (BiasParams, bias_fedavg, bias_monte_carlo, bias_safa_recurrence,
                   default_case_fractions)
from .config import SCHEMA_VERSION, ConfigError, RunConfig, SweepSpec, task_kind, tomllib
from .env import FIELDS, TimingConfig
from .learners import (LearnerSpec, MODEL_FOR_TASK, TaskKind, load_csv, make_binary_margin,
                       make_classification, make_regression)
from .simulation import Simulation

log = logging.getLogger(__name__)


def build_dataset(cfg: RunConfig):
    kind = TaskKind(task_kind(cfg.run.task))
    d = cfg.data
    if d.path:
        return load_csv(d.path, kind)
    if kind is TaskKind.REGRESSION:
        return make_regression(n=d.n, d=d.d, seed=d.data_seed)
    if kind is TaskKind.CLASSIFICATION:
        return make_classification(n=d.n, d=d.d, num_classes=d.num_classes, seed=d.data_seed)
    return make_binary_margin(n=d.n, d=d.d, seed=d.data_seed)


def build_timing(cfg: RunConfig) -> TimingConfig:
    t = cfg.timing
    dist = None if t.per_model_dist_time == "auto" else float(t.per_model_dist_time)
    return TimingConfig(t.model_size, t.client_bw, t.server_bw, t.t_lim, dist, t.cap_mode)


def build_learner(cfg: RunConfig) -> LearnerSpec:
    lr = cfg.learner
    kind = MODEL_FOR_TASK[TaskKind(task_kind(cfg.run.task))]
    return LearnerSpec(kind, lr.learning_rate, lr.epochs, lr.batch_size, lr.reg, lr.fit_intercept)


def build_simulation(cfg: RunConfig, dataset=None) -> Simulation:
    cfg.validate()
    f, p = cfg.federation, cfg.population
    return Simulation(
        cfg.run.protocol, dataset if dataset is not None else build_dataset(cfg),
        build_learner(cfg), build_timing(cfg), m=f.m, fraction=f.C, crash_prob=f.crash_prob,
        lag_tolerance=f.lag_tolerance, seed=cfg.run.master_seed, perf_lambda=p.perf_lambda,
        base_rate=p.base_rate, partition_std=p.partition_std,
    )


def _fmt(value):
    # repr of a Python float round-trips exactly; numpy scalars are unwrapped first
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def rounds_csv(reports, cfg: RunConfig) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA_VERSION} config_hash={cfg.config_hash()} "
              f"protocol={cfg.run.protocol} task={cfg.run.task}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELDS)
    for rep in reports:
        row = rep.as_row()
        writer.writerow([_fmt(row[k]) for k in FIELDS])
    return buf.getvalue()


def read_rounds_csv(path):
    """Parse a rounds CSV back into (header comment, list of row dicts)."""
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\n")
        return header, list(csv.DictReader(fh))


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_experiment(cfg: RunConfig, output_dir=None):
    """Run one configuration and write ``rounds.csv``, ``summary.json`` and ``config.toml``.

    Returns (path to rounds CSV, summary dict).
    """
    sim = build_simulation(cfg)
    sim.run(cfg.run.rounds)
    summary = {k: _json_safe(v) for k, v in dataclasses.asdict(sim.summary()).items()}
    summary.update(schema=SCHEMA_VERSION, config_hash=cfg.config_hash(),
                   protocol=cfg.run.protocol, task=cfg.run.task, seed=cfg.run.master_seed)
    out = Path(output_dir if output_dir is not None else cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "rounds.csv"
    csv_path.write_text(rounds_csv(sim.reports, cfg))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.toml").write_text(cfg.to_toml())
    log.info("%s/%s: %d rounds -> %s", cfg.run.protocol, cfg.run.task, cfg.run.rounds, out)
    return csv_path, summary


def cell_name(coords: dict) -> str:
    return "_".join(f"{k}={v}" for k, v in coords.items()) or "cell"


def _run_cell(cfg_dict, out_dir):
    cfg = RunConfig.from_dict(cfg_dict)
    try:
        _, summary = run_experiment(cfg, out_dir)
        return {"status": "ok", "summary": summary}
    except Exception as exc:  # recorded in the index; other cells continue
        return {"status": "error", "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def run_sweep(spec: SweepSpec, output_dir, parallelism=1):
    """Run every cell of ``spec``; returns the index entries in cell order.

    Only the parent process writes the index: ``index.jsonl`` gets one line
    per finished cell, and ``index.json`` lists all cells in grid order.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = list(spec.cells())
    entries = [None] * len(cells)
    jsonl = out / "index.jsonl"
    jsonl.write_text("")

    def record(i, result):
        coords, cfg = cells[i]
        entry = {"coords": coords, "seed": cfg.run.master_seed, "dir": cell_name(coords),
                 "config_hash": cfg.config_hash(), **result}
        entry.pop("traceback", None)
        entries[i] = entry
        with jsonl.open("a") as fh:
            fh.write(json.dumps(entry, sort_keys=True, default=_json_safe) + "\n")

    jobs = [(cfg.to_dict(), str(out / cell_name(coords))) for coords, cfg in cells]
    if parallelism <= 1:
        for i, job in enumerate(jobs):
            record(i, _run_cell(*job))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {pool.submit(_run_cell, *job): i for i, job in enumerate(jobs)}
            for fut in as_completed(futures):
                record(futures[fut], fut.result())
    (out / "index.json").write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    return entries


BIAS_COLUMNS = ["case", "C", "R", "cr_A", "cr_B", "round", "P_A", "P_B", "P_A_mc", "P_B_mc",
                "bias_fedavg", "bias_analytic", "bias_mc", "mc_stderr"]


def default_bias_params(cr=0.3, max_round=50):
    return [BiasParams(C, cr, cr, cr, max_round) for C in default_case_fractions(cr).values()]


def load_bias_params(path):
    """Read ``[[params]]`` rows (C, R, cr_A, cr_B, max_round) and an optional ``[monte_carlo]`` table."""
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bias params file is not valid TOML: {exc}") from exc
    rows = data.get("params")
    if not rows:
        raise ConfigError("bias params file needs at least one [[params]] table")
    try:
        params = [BiasParams(float(r["C"]), float(r["R"]), float(r["cr_A"]), float(r["cr_B"]),
                             int(r.get("max_round", 50))) for r in rows]
    except KeyError as exc:
        raise ConfigError(f"params: missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from None
    return params, data.get("monte_carlo", {})


def run_bias_analysis(params, output_path, trials=10_000, seed=0, m_background=100):
    """Write the analytic-versus-simulated bias table for every parameter row."""
    rows = []
    for p in params:
        analytic = bias_safa_recurrence(p)
        mc = bias_monte_carlo(p, trials, seed, m_background=m_background)
        flat = bias_fedavg(p.cr_A, p.cr_B)
        for i, r in enumerate(analytic.rounds):
            rows.append([p.case.value, p.C, p.R, p.cr_A, p.cr_B, int(r),
                         analytic.p_a[i], analytic.p_b[i], mc.p_a[i], mc.p_b[i], flat,
                         analytic.bias[i], mc.bias[i], mc.se_bias[i]])
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BIAS_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return output_path, rows
