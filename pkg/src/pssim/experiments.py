"""Experiment harness: configs, the run matrix, and summary output.

A single ExperimentConfig describes a matrix of runs (algorithm x barrier x
delay model); each cell is repeated once per seed and summarized by its mean
time-to-target-error, mean wait time, and speedup against the matching
synchronous run.  Synchronous algorithms are inherently lockstep, so they
always run under bsp regardless of the barrier axis.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from .barriers import parse_barrier
from .engine import RunResult
from .linalg import Dataset, make_synthetic, objective, parse_libsvm, partition
from .optimizers import (ALGORITHMS, SYNC_OF, AlgorithmConfig,
                         compute_baseline, run_algorithm)
from .stragglers import DelayModel, parse_delay

JITTER_SEED_OFFSET = 7919


@dataclass
class ExperimentConfig:
    data: str
    algos: tuple = ("sgd",)
    barriers: tuple = ("bsp",)
    delays: tuple = ("none",)
    workers: int = 4
    partitions: int = 8
    rate: float = 0.1
    step: float = 0.1
    iterations: int = 100
    clock: str = "virtual"
    out: str = "out"
    seeds: tuple = (1, 2, 3)
    schedule: str = "inverse_sqrt"
    saga_mode: str = "canonical"
    step_heuristic: bool = True
    eval_every: int = 10
    target_error: float | None = None
    stop_error: float | None = None
    duration_jitter: float = 0.0
    data_seed: int = 0

    def __post_init__(self):
        self.algos = _as_tuple(self.algos)
        self.barriers = _as_tuple(self.barriers)
        self.delays = _as_tuple(self.delays)
        self.seeds = tuple(int(s) for s in _as_tuple(self.seeds))

    def validate(self):
        for a in self.algos:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}; known: {ALGORITHMS}")
        for b in self.barriers:
            parse_barrier(b)
        for dl in self.delays:
            parse_delay(dl)
        if self.clock not in ("virtual", "wall"):
            raise ValueError(f"clock must be virtual or wall, got {self.clock!r}")
        if self.workers < 1 or self.partitions < self.workers:
            raise ValueError("need workers >= 1 and partitions >= workers")
        if not self.seeds:
            raise ValueError("need at least one seed")
        return self


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def apply_config_file(cfg: ExperimentConfig, path: str) -> ExperimentConfig:
    """JSON key/value pairs override whatever the flags said."""
    with open(path) as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    bad = set(overrides) - known
    if bad:
        raise ValueError(f"unknown config keys {sorted(bad)}; known: {sorted(known)}")
    return dataclasses.replace(cfg, **overrides)


def make_dataset(data_spec: str, partitions: int, data_seed: int) -> Dataset:
    """Build the partitioned dataset from a path or a synth:n,d,seed spec.

    The synth spec takes an optional fourth component, the label noise
    standard deviation: synth:n,d,seed,0.1.
    """
    if data_spec.startswith("synth:"):
        parts = data_spec[len("synth:"):].split(",")
        if len(parts) not in (3, 4):
            raise ValueError(f"synth spec needs n,d,seed[,noise]: {data_spec!r}")
        n, d, seed = int(parts[0]), int(parts[1]), int(parts[2])
        noise = float(parts[3]) if len(parts) == 4 else 0.0
        rows, _ = make_synthetic(n, d, seed, noise)
    else:
        with open(data_spec) as fh:
            rows = list(parse_libsvm(fh).all_rows())
    return partition(rows, partitions, data_seed)


@dataclass
class CellResult:
    """One matrix cell: an (algorithm, barrier, delay) combination."""

    algo: str
    barrier: str
    delay: str
    runs: list = field(default_factory=list)
    times_to_target: list = field(default_factory=list)
    mean_waits: list = field(default_factory=list)
    final_errors: list = field(default_factory=list)
    avg_task_times: list = field(default_factory=list)

    def label(self) -> str:
        safe = f"{self.algo}_{self.barrier}_{self.delay}"
        return safe.replace(":", "-").replace("=", "").replace(",", "_")

    def mean_time_to_target(self) -> float | None:
        hits = [t for t in self.times_to_target if t is not None]
        if len(hits) != len(self.times_to_target) or not hits:
            return None
        return sum(hits) / len(hits)

    def mean_wait(self) -> float:
        return sum(self.mean_waits) / len(self.mean_waits)

    def mean_final_error(self) -> float:
        return sum(self.final_errors) / len(self.final_errors)


def _algorithm_config(cfg: ExperimentConfig, delay: DelayModel,
                      seed: int, eval_fn) -> AlgorithmConfig:
    return AlgorithmConfig(
        workers=cfg.workers, iterations=cfg.iterations, rate=cfg.rate,
        step=cfg.step, clock=cfg.clock, schedule=cfg.schedule,
        saga_mode=cfg.saga_mode, step_heuristic=cfg.step_heuristic,
        sample_seed=seed, multipliers=delay.multipliers(cfg.workers),
        duration_jitter=cfg.duration_jitter,
        jitter_seed=seed + JITTER_SEED_OFFSET, eval_fn=eval_fn,
        eval_every=cfg.eval_every, stop_error=cfg.stop_error)


def run_cell(cfg: ExperimentConfig, dataset: Dataset, baseline: float,
             algo: str, barrier_spec: str, delay_spec: str) -> CellResult:
    barrier = parse_barrier("bsp" if algo in ("sgd", "saga") else barrier_spec)
    delay = parse_delay(delay_spec)
    clock = cfg.clock
    cell = CellResult(algo=algo, barrier=barrier.name, delay=delay.label())

    def eval_fn(w):
        return objective(dataset, w, cfg.workers) - baseline

    for seed in cfg.seeds:
        result = run_algorithm(algo, dataset, barrier,
                               _algorithm_config(cfg, delay, seed, eval_fn))
        cell.runs.append(result)
        cell.mean_waits.append(metrics_mod.mean_wait_time(result.metrics))
        cell.final_errors.append(metrics_mod.final_error(result.metrics))
        tasks = result.trace.collects
        cell.avg_task_times.append(
            sum(c.task_time for c in tasks) / len(tasks) if tasks else 0.0)
        if cfg.target_error is not None:
            cell.times_to_target.append(metrics_mod.time_to_target_error(
                result.metrics, cfg.target_error, clock=clock))
    return cell


def run_matrix(cfg: ExperimentConfig):
    """Run every (algorithm, barrier, delay) cell; dedups forced-bsp repeats."""
    cfg.validate()
    dataset = make_dataset(cfg.data, cfg.partitions, cfg.data_seed)
    baseline = compute_baseline(dataset, cfg.workers)
    cells = []
    seen = set()
    for algo in cfg.algos:
        for barrier_spec in cfg.barriers:
            for delay_spec in cfg.delays:
                key = ("bsp" if algo in ("sgd", "saga") else barrier_spec,
                       algo, delay_spec)
                if key in seen:
                    continue
                seen.add(key)
                cells.append(run_cell(cfg, dataset, baseline, algo,
                                      barrier_spec, delay_spec))
    return cells, baseline


def speedup_vs_sync(cell: CellResult, cells) -> float | None:
    """time-to-target of the matching synchronous run over this cell's."""
    sync_name = SYNC_OF.get(cell.algo)
    if sync_name is None:
        return None
    mine = cell.mean_time_to_target()
    if mine is None or mine <= 0:
        return None
    for other in cells:
        if other.algo == sync_name and other.delay == cell.delay:
            theirs = other.mean_time_to_target()
            if theirs is not None:
                return theirs / mine
    return None


SUMMARY_HEADER = ("algo", "barrier", "delay", "reps", "time_to_target",
                  "mean_wait_time_s", "final_error", "avg_task_time",
                  "speedup_vs_sync")


def write_outputs(cfg: ExperimentConfig, cells, out_dir: str | None = None):
    """Per-cell metrics.csv (first repetition) plus summary.csv and plots.gp."""
    out = out_dir or cfg.out
    os.makedirs(out, exist_ok=True)
    labels = []
    for cell in cells:
        cell_dir = os.path.join(out, cell.label())
        os.makedirs(cell_dir, exist_ok=True)
        metrics_mod.write_metrics(cell.runs[0].metrics,
                                  os.path.join(cell_dir, "metrics.csv"))
        labels.append(cell.label())
    rows = [",".join(SUMMARY_HEADER)]
    for cell in cells:
        tt = cell.mean_time_to_target()
        sp = speedup_vs_sync(cell, cells)
        rows.append(",".join([
            cell.algo, cell.barrier.replace(",", ";"), cell.delay.replace(",", ";"),
            str(len(cell.runs)),
            f"{tt:.9g}" if tt is not None else "",
            f"{cell.mean_wait():.9g}",
            f"{cell.mean_final_error():.9g}",
            f"{np.mean(cell.avg_task_times):.9g}",
            f"{sp:.9g}" if sp is not None else "",
        ]))
    with open(os.path.join(out, "summary.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    _write_gnuplot(out, labels, cfg.clock)
    return os.path.join(out, "summary.csv")


def _write_gnuplot(out: str, labels, clock: str):
    tcol = 2 if clock == "virtual" else 1
    lines = [
        "set datafile separator ','",
        "set datafile missing ''",
        "set logscale y",
        f"set xlabel '{'virtual time' if clock == 'virtual' else 'wall time (s)'}'",
        "set ylabel 'objective error'",
        "set key outside",
        "plot \\",
    ]
    plots = [
        f"  '{label}/metrics.csv' using {tcol}:6 every ::1 with lines title '{label}'"
        for label in labels
    ]
    lines.append(", \\\n".join(plots))
    with open(os.path.join(out, "plots.gp"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def calibrate_iteration_time(name: str, dataset: Dataset, barrier,
                             config: AlgorithmConfig,
                             iterations: int = 100) -> float:
    """Mean per-task completion time over an undelayed calibration run."""
    cal = dataclasses.replace(config, multipliers=None, duration_jitter=0.0,
                              iterations=iterations, eval_fn=None,
                              stop_error=None, record_iterates=False)
    result: RunResult = run_algorithm(name, dataset, barrier, cal)
    tasks = result.trace.collects
    if not tasks:
        raise RuntimeError("calibration run completed no tasks")
    return sum(c.task_time for c in tasks) / len(tasks)
