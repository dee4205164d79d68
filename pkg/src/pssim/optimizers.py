"""Optimizer step rules and the programs that run them on the engine.

Four algorithms share two families of arithmetic:

* sgd / asgd: w <- w - alpha_k * g.  The synchronous variant aggregates all
  workers' results for a round into one update; the asynchronous variant
  applies one update per consumed result.  By convention asynchronous runs
  divide the configured synchronous step size by the worker count.
* saga / asaga: variance reduction against per-sample gradient history
  recovered from stored model versions.  Two modes are provided.
  "canonical" matches the standard method: the step uses the pre-update
  average and the average moves by (g - h) * batch/n, which keeps it equal to
  the mean of an explicit per-sample gradient table.  "eager_average" applies the
  alternative order: the average moves first, scaled by rate*n (or rate*n/P
  for asaga), and the step uses the post-update average.  The eager scaling
  is not the table mean and is kept only for comparison; the default
  everywhere is canonical.

Step functions below are pure state transitions and are unit-testable on
their own; programs adapt them to the engine's prepare/execute/consume hooks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import EngineConfig, RunResult, TaskPayload, TaskResult, run
from .linalg import (LEAST_SQUARES, Dataset, minibatch_gradient, objective,
                     sample_minibatch)

SAGA_MODES = ("canonical", "eager_average")


@dataclass
class SgdState:
    w: np.ndarray
    alpha0: float
    schedule: str = "inverse_sqrt"
    k: int = 0

    def __post_init__(self):
        if self.schedule not in ("inverse_sqrt", "fixed"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def step_size(self) -> float:
        """Step size that the next update will use (k is completed steps)."""
        if self.schedule == "fixed":
            return self.alpha0
        return self.alpha0 / math.sqrt(self.k + 1)


def sgd_step(state: SgdState, gradient: np.ndarray) -> SgdState:
    state.w = state.w - state.step_size() * gradient
    state.k += 1
    return state


def asgd_step(state: SgdState, result: TaskResult) -> SgdState:
    """Identical arithmetic to sgd_step, fed by one consumed task result."""
    return sgd_step(state, result.gradient)


def async_step_size(sync_alpha0: float, workers: int) -> float:
    """Asynchronous runs take the synchronous step divided by worker count."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return sync_alpha0 / workers


@dataclass
class SagaState:
    w: np.ndarray
    average_history: np.ndarray
    alpha: float
    n: int
    rate: float
    partitions: int
    mode: str = "canonical"
    k: int = 0

    def __post_init__(self):
        if self.mode not in SAGA_MODES:
            raise ValueError(f"unknown saga mode {self.mode!r}")


def _saga_update(state: SagaState, gradient, history, batch_size, eager_scale):
    diff = gradient - history
    if state.mode == "canonical":
        state.w = state.w - state.alpha * (diff + state.average_history)
        state.average_history = state.average_history + diff * (batch_size / state.n)
    else:
        state.average_history = state.average_history + diff * eager_scale
        state.w = state.w - state.alpha * (diff + state.average_history)
    state.k += 1
    return state


def saga_step(state: SagaState, gradient: np.ndarray, history: np.ndarray,
              batch_size: int) -> SagaState:
    return _saga_update(state, gradient, history, batch_size,
                        eager_scale=state.rate * state.n)


def asaga_step(state: SagaState, result: TaskResult) -> SagaState:
    """As saga_step; in eager_average mode the average moves by (g-h)*rate*n/P."""
    if result.history_gradient is None:
        raise ValueError("asaga_step needs a task result with a history gradient")
    return _saga_update(state, result.gradient, result.history_gradient,
                        result.batch_size,
                        eager_scale=state.rate * state.n / state.partitions)


def full_mean_gradient(dataset: Dataset, w: np.ndarray, loss=LEAST_SQUARES) -> np.ndarray:
    """(1/n) sum of per-sample gradients over the whole dataset."""
    acc = np.zeros(dataset.d)
    for row in dataset.all_rows():
        loss.accumulate_gradient(row, w, acc)
    return acc / dataset.n


def normal_equations(dataset: Dataset) -> np.ndarray:
    """Solve (A'A + eps I) w = A'b.

    eps stays zero unless the Gram matrix looks numerically singular
    (condition estimate above 1e12), in which case a tiny ridge proportional
    to the average diagonal is added.
    """
    d = dataset.d
    ata = np.zeros((d, d))
    atb = np.zeros(d)
    for p in dataset.partitions:
        a, y = p.dense(d)
        ata += a.T @ a
        atb += a.T @ y
    eps = 0.0
    if np.linalg.cond(ata) > 1e12:
        eps = 1e-8 * np.trace(ata) / d
    return np.linalg.solve(ata + eps * np.eye(d), atb)


def compute_baseline(dataset: Dataset, workers: int = 1) -> float:
    """Objective value at the normal-equations solution."""
    return objective(dataset, normal_equations(dataset), workers)


@dataclass
class GradientTaskSpec:
    worker_id: int
    version: int
    w: np.ndarray
    samples: list          # (partition_id, local indices, global indices)
    history: dict | None   # global index -> model vector it last saw


class GradientProgram:
    """Shared worker math: sample each owned partition, average the gradients.

    Partitions are dealt to workers round-robin by id; every partition keeps
    its own RNG stream so draw order never depends on scheduling.
    """

    def __init__(self, dataset: Dataset, workers: int, rate: float,
                 loss=LEAST_SQUARES, sample_seed: int = 0,
                 with_history: bool = False, initial_w: np.ndarray | None = None):
        if dataset.P < workers:
            raise ValueError(
                f"{workers} workers need at least that many partitions, got {dataset.P}")
        self.dataset = dataset
        self.workers = workers
        self.rate = rate
        self.loss = loss
        self.with_history = with_history
        self.worker_parts = [
            [p for p in range(dataset.P) if p % workers == w]
            for w in range(workers)
        ]
        seqs = np.random.SeedSequence(sample_seed).spawn(dataset.P)
        self.rngs = [np.random.default_rng(s) for s in seqs]
        self.n_samples = dataset.n
        self.initial_w = (np.zeros(dataset.d) if initial_w is None
                          else np.array(initial_w, dtype=np.float64))
        self._pending = {}

    def prepare_task(self, worker_id: int, ctx) -> GradientTaskSpec:
        w = ctx.store.value()
        version = ctx.server_version
        samples = []
        history = {} if self.with_history else None
        for pid in self.worker_parts[worker_id]:
            part = self.dataset.partitions[pid]
            local = sample_minibatch(part, self.rate, self.rngs[pid])
            glob = part.global_offsets[local]
            samples.append((pid, local, glob))
            if history is not None:
                for g in glob:
                    history[int(g)] = ctx.store.value_at(int(g))
        if self.with_history:
            self._pending[worker_id] = (version, w)
        return GradientTaskSpec(worker_id, version, w, samples, history)

    def execute_task(self, spec: GradientTaskSpec) -> TaskPayload:
        d = spec.w.shape[0]
        acc = np.zeros(d)
        hacc = np.zeros(d) if spec.history is not None else None
        count = 0
        globs = []
        for pid, local, glob in spec.samples:
            part = self.dataset.partitions[pid]
            for s, g in zip(local, glob):
                row = part.rows[s]
                self.loss.accumulate_gradient(row, spec.w, acc)
                if hacc is not None:
                    self.loss.accumulate_gradient(row, spec.history[int(g)], hacc)
            count += len(local)
            globs.append(glob)
        gradient = acc / count
        hist = hacc / count if hacc is not None else None
        return TaskPayload(gradient=gradient, batch_size=count,
                           history_gradient=hist,
                           sample_indices=np.concatenate(globs))

    def consume(self, result: TaskResult, ctx):
        raise NotImplementedError


class AsgdProgram(GradientProgram):
    """One sgd-arithmetic update per consumed result."""

    def __init__(self, dataset, workers, rate, alpha0, schedule="inverse_sqrt",
                 **kw):
        super().__init__(dataset, workers, rate, **kw)
        self.state = SgdState(w=np.array(self.initial_w), alpha0=alpha0,
                              schedule=schedule)

    def consume(self, result: TaskResult, ctx):
        asgd_step(self.state, result)
        return self.state.w


class SgdProgram(GradientProgram):
    """Synchronous rounds: one update from the batch-weighted mean gradient."""

    def __init__(self, dataset, workers, rate, alpha0, schedule="inverse_sqrt",
                 **kw):
        super().__init__(dataset, workers, rate, **kw)
        self.state = SgdState(w=np.array(self.initial_w), alpha0=alpha0,
                              schedule=schedule)
        self._round = []

    def consume(self, result: TaskResult, ctx):
        self._round.append(result)
        if len(self._round) < self.workers:
            return None
        batch = sum(r.batch_size for r in self._round)
        g = sum(r.gradient * r.batch_size for r in self._round) / batch
        self._round.clear()
        sgd_step(self.state, g)
        return self.state.w


class AsagaProgram(GradientProgram):
    """Per-result variance-reduced updates against recovered history."""

    def __init__(self, dataset, workers, rate, alpha, mode="canonical", **kw):
        super().__init__(dataset, workers, rate, with_history=True, **kw)
        avg0 = (full_mean_gradient(dataset, self.initial_w, self.loss)
                if mode == "canonical" else np.zeros(dataset.d))
        self.state = SagaState(w=np.array(self.initial_w), average_history=avg0,
                               alpha=alpha, n=dataset.n, rate=rate,
                               partitions=dataset.P, mode=mode)

    def _touch(self, result: TaskResult, ctx):
        version, w = self._pending.pop(result.worker_id)
        ctx.store.touch(result.sample_indices, result.model_version, value=w)

    def consume(self, result: TaskResult, ctx):
        asaga_step(self.state, result)
        self._touch(result, ctx)
        return self.state.w


class SagaProgram(AsagaProgram):
    """Synchronous rounds of the variance-reduced update."""

    def __init__(self, dataset, workers, rate, alpha, mode="canonical", **kw):
        super().__init__(dataset, workers, rate, alpha, mode=mode, **kw)
        self._round = []

    def consume(self, result: TaskResult, ctx):
        self._touch(result, ctx)
        self._round.append(result)
        if len(self._round) < self.workers:
            return None
        batch = sum(r.batch_size for r in self._round)
        g = sum(r.gradient * r.batch_size for r in self._round) / batch
        h = sum(r.history_gradient * r.batch_size for r in self._round) / batch
        self._round.clear()
        saga_step(self.state, g, h, batch)
        return self.state.w


ALGORITHMS = ("sgd", "asgd", "saga", "asaga")
SYNC_OF = {"asgd": "sgd", "asaga": "saga"}


@dataclass
class AlgorithmConfig:
    """Everything a single run needs besides the dataset and barrier."""

    workers: int
    iterations: int
    rate: float
    step: float                      # synchronous step size alpha0
    clock: str = "virtual"
    schedule: str = "inverse_sqrt"
    saga_mode: str = "canonical"
    step_heuristic: bool = True      # async runs use step / workers
    sample_seed: int = 0
    initial_w: np.ndarray | None = None
    multipliers: Sequence[float] | None = None
    task_cost: float | Sequence[float] = 1.0
    duration_jitter: float = 0.0
    jitter_seed: int = 0
    eval_fn: object = None
    eval_every: int = 10
    stop_error: float | None = None
    record_iterates: bool = False

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            workers=self.workers, iterations=self.iterations, clock=self.clock,
            multipliers=self.multipliers, task_cost=self.task_cost,
            duration_jitter=self.duration_jitter, jitter_seed=self.jitter_seed,
            eval_fn=self.eval_fn, eval_every=self.eval_every,
            stop_error=self.stop_error, record_iterates=self.record_iterates)


def effective_step(name: str, config: AlgorithmConfig) -> float:
    if name in SYNC_OF and config.step_heuristic:
        return async_step_size(config.step, config.workers)
    return config.step


def build_program(name: str, dataset: Dataset, config: AlgorithmConfig,
                  loss=LEAST_SQUARES):
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; known: {ALGORITHMS}")
    alpha = effective_step(name, config)
    common = dict(loss=loss, sample_seed=config.sample_seed,
                  initial_w=config.initial_w)
    if name == "sgd":
        return SgdProgram(dataset, config.workers, config.rate, alpha,
                          schedule=config.schedule, **common)
    if name == "asgd":
        return AsgdProgram(dataset, config.workers, config.rate, alpha,
                           schedule=config.schedule, **common)
    if name == "saga":
        return SagaProgram(dataset, config.workers, config.rate, alpha,
                           mode=config.saga_mode, **common)
    return AsagaProgram(dataset, config.workers, config.rate, alpha,
                        mode=config.saga_mode, **common)


def run_algorithm(name: str, dataset: Dataset, barrier,
                  config: AlgorithmConfig, loss=LEAST_SQUARES) -> RunResult:
    """Wire a program to the engine and run it to completion."""
    program = build_program(name, dataset, config, loss)
    return run(config.engine_config(), program, barrier)
