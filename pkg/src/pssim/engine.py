"""Single-process asynchronous parameter-server runtime.

One server loop owns the model; m workers compute gradient tasks against
model snapshots taken at dispatch.  Completed tasks land in a single FIFO
result queue; the server consumes them in arrival order, applies the
optimizer step, publishes the new model version, and asks the active barrier
predicate which idle workers to dispatch next.

Two interchangeable clocks drive the run:

* virtual: a discrete-event loop.  Task durations are nominal cost times the
  worker's slowdown multiplier (plus optional seeded jitter), events are
  processed in (time, dispatch order) and the whole run is deterministic.
* wall: real threads that compute, then sleep (multiplier - 1) times their
  measured compute time to emulate the slowdown.

Programs plug in through four hooks: ``initial_w``, ``prepare_task(worker_id,
ctx)`` (server side: sampling and snapshot resolution), ``execute_task(spec)``
(worker side: pure math, returns a TaskPayload), and ``consume(result, ctx)``
(server side: optimizer step; returns the new model or None while
accumulating).  A task that raises marks its worker permanently failed; the
run continues while some worker can still make progress and raises
DeadlockError otherwise.

Bookkeeping per worker lives in a single stat table: availability (flipped
false at dispatch, true at submission), staleness (server updates since the
worker's in-flight task was dispatched), and an exponential moving average of
task completion time with factor 0.3.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .barriers import BarrierView, ConsistencyModel
from .history import DynamicBroadcast, VersionStore
from .metrics import MetricsRecord, record_wait_time

EMA_FACTOR = 0.3


class EngineError(RuntimeError):
    pass


class DeadlockError(EngineError):
    """No task in flight, nothing queued, and the barrier admits nobody."""


class DivergenceError(EngineError):
    """An update produced non-finite model entries."""


@dataclass
class TaskPayload:
    """What a worker hands back: aggregated gradients plus sample bookkeeping."""

    gradient: np.ndarray
    batch_size: int
    history_gradient: np.ndarray | None = None
    sample_indices: np.ndarray | None = None


@dataclass
class TaskResult:
    """A completed task as it sits in the result queue."""

    worker_id: int
    gradient: np.ndarray
    batch_size: int
    model_version: int
    submit_time: float
    dispatch_time: float
    history_gradient: np.ndarray | None = None
    sample_indices: np.ndarray | None = None
    enqueue_seq: int = -1


@dataclass
class WorkerStatus:
    worker_id: int
    available: bool = True
    failed: bool = False
    staleness: int = 0
    avg_task_time: float = 0.0
    last_dispatch_version: int = 0
    last_submit_time: float | None = None
    tasks_completed: int = 0

    def copy(self) -> "WorkerStatus":
        return WorkerStatus(self.worker_id, self.available, self.failed,
                            self.staleness, self.avg_task_time,
                            self.last_dispatch_version, self.last_submit_time,
                            self.tasks_completed)


class StatTable:
    """Shared per-worker bookkeeping table."""

    def __init__(self, workers: int):
        if workers < 1:
            raise ValueError("need at least one worker")
        self.statuses = [WorkerStatus(i) for i in range(workers)]

    def __len__(self) -> int:
        return len(self.statuses)

    def __getitem__(self, worker_id: int) -> WorkerStatus:
        return self.statuses[worker_id]

    def available_ids(self):
        return [s.worker_id for s in self.statuses if s.available]

    def active_count(self) -> int:
        return sum(1 for s in self.statuses if not s.failed)

    def snapshot(self) -> tuple:
        return tuple(s.copy() for s in self.statuses)

    def note_dispatch(self, worker_id: int, version: int):
        st = self.statuses[worker_id]
        st.available = False
        st.last_dispatch_version = version
        st.staleness = 0

    def note_submit(self, worker_id: int, submit_time: float):
        st = self.statuses[worker_id]
        st.available = True
        st.last_submit_time = submit_time

    def note_collect(self, worker_id: int, staleness: int, task_time: float):
        st = self.statuses[worker_id]
        st.staleness = staleness
        if st.tasks_completed == 0:
            st.avg_task_time = task_time
        else:
            st.avg_task_time = EMA_FACTOR * task_time + (1 - EMA_FACTOR) * st.avg_task_time
        st.tasks_completed += 1

    def note_failure(self, worker_id: int):
        st = self.statuses[worker_id]
        st.failed = True
        st.available = False

    def refresh_staleness(self, server_version: int):
        for st in self.statuses:
            if not st.available and not st.failed:
                st.staleness = server_version - st.last_dispatch_version


class _Fifo:
    """Multi-producer single-consumer FIFO with a condition for wall mode."""

    def __init__(self):
        self._dq = deque()
        self._cv = threading.Condition()

    def put(self, item):
        with self._cv:
            self._dq.append(item)
            self._cv.notify()

    def get(self, timeout: float | None = None):
        with self._cv:
            if not self._dq and timeout:
                self._cv.wait(timeout)
            if not self._dq:
                return None
            return self._dq.popleft()

    def __len__(self) -> int:
        return len(self._dq)


@dataclass
class DispatchEvent:
    time: float
    worker_id: int
    version: int
    seq: int
    available_before: int


@dataclass
class CollectEvent:
    time: float
    worker_id: int
    enqueue_seq: int
    collect_seq: int
    staleness: int
    model_version: int
    task_time: float = 0.0


@dataclass
class RunTrace:
    dispatches: list = field(default_factory=list)
    submissions: list = field(default_factory=list)
    collects: list = field(default_factory=list)
    failures: list = field(default_factory=list)


class AsyncContext:
    """Server-side handle bundling the queue, stat table, and version store."""

    def __init__(self, stat: StatTable, store: VersionStore):
        self.stat = stat
        self.store = store
        self.result_queue = _Fifo()
        self.server_version = 0
        self.trace = RunTrace()
        self.lock = threading.RLock()
        self._enqueue_seq = itertools.count()
        self._collect_seq = itertools.count()
        self._now: Callable[[], float] = lambda: 0.0
        self.in_flight = 0

    def now(self) -> float:
        return self._now()

    def has_next(self) -> bool:
        return len(self.result_queue) > 0

    def submit(self, result: TaskResult):
        """Enqueue a finished task and flip its worker back to available."""
        with self.lock:
            result.enqueue_seq = next(self._enqueue_seq)
            self.stat.note_submit(result.worker_id, result.submit_time)
            self.trace.submissions.append(
                (result.submit_time, result.worker_id, result.enqueue_seq))
            self.in_flight -= 1
        self.result_queue.put(result)

    def async_collect(self, timeout: float | None = None) -> TaskResult | None:
        """Pop the oldest queued result and refresh the submitter's stats."""
        result = self.result_queue.get(timeout)
        if result is None:
            return None
        with self.lock:
            staleness = self.server_version - result.model_version
            task_time = result.submit_time - result.dispatch_time
            self.stat.note_collect(result.worker_id, staleness, task_time)
            self.trace.collects.append(CollectEvent(
                time=self.now(), worker_id=result.worker_id,
                enqueue_seq=result.enqueue_seq,
                collect_seq=next(self._collect_seq),
                staleness=staleness, model_version=result.model_version,
                task_time=task_time))
        return result

    def async_collect_all(self, timeout: float | None = None):
        """Like async_collect but also surfaces the bookkeeping attributes."""
        result = self.async_collect(timeout)
        if result is None:
            return None
        attrs = {
            "worker_id": result.worker_id,
            "batch_size": result.batch_size,
            "model_version": result.model_version,
            "submit_time": result.submit_time,
            "staleness": self.server_version - result.model_version,
        }
        return result, attrs

    def async_broadcast(self, w: np.ndarray) -> DynamicBroadcast:
        """Publish w as the next model version and advance the server clock."""
        with self.lock:
            vid = self.store.publish(w)
            self.server_version = vid
            self.stat.refresh_staleness(vid)
            return DynamicBroadcast(self.store, vid)

    def server_update(self, new_w: np.ndarray) -> int:
        return self.async_broadcast(new_w).version_id

    def barrier_view(self) -> BarrierView:
        return BarrierView(statuses=self.stat.snapshot(),
                           queue_length=len(self.result_queue))


def async_barrier(model: ConsistencyModel, ctx: AsyncContext) -> set:
    """Ask the consistency model which available workers may be dispatched."""
    with ctx.lock:
        view = ctx.barrier_view()
        admitted = model.admit(view)
    return admitted & view.available_ids()


def async_reduce(partials, combine, ctx: AsyncContext, *, worker_id: int,
                 model_version: int, batch_size: int,
                 dispatch_time: float = 0.0, sample_indices=None):
    """Fold one worker's per-partition partials and enqueue a single result.

    Returns immediately; the combined value lands on ctx.result_queue.  The
    fold accepts either raw gradient arrays or TaskPayload objects.
    """
    parts = list(partials)
    if not parts:
        return
    folded = parts[0]
    for p in parts[1:]:
        folded = combine(folded, p)
    if isinstance(folded, TaskPayload):
        result = TaskResult(worker_id=worker_id, gradient=folded.gradient,
                            batch_size=folded.batch_size,
                            model_version=model_version,
                            submit_time=ctx.now(), dispatch_time=dispatch_time,
                            history_gradient=folded.history_gradient,
                            sample_indices=folded.sample_indices)
    else:
        result = TaskResult(worker_id=worker_id, gradient=folded,
                            batch_size=batch_size, model_version=model_version,
                            submit_time=ctx.now(), dispatch_time=dispatch_time,
                            sample_indices=sample_indices)
    with ctx.lock:
        ctx.in_flight += 1
    ctx.submit(result)


def async_aggregate(selections, zero, seq_op, comb_op, ctx: AsyncContext, *,
                    worker_id: int, model_version: int,
                    dispatch_time: float = 0.0):
    """Fold rows per partition with seq_op, combine partials with comb_op,
    and enqueue one result.  An empty selection enqueues nothing at all."""
    partials = []
    total = 0
    for rows in selections:
        rows = list(rows)
        if not rows:
            continue
        acc = zero
        for r in rows:
            acc = seq_op(acc, r)
        partials.append(acc)
        total += len(rows)
    if not partials:
        return
    folded = partials[0]
    for p in partials[1:]:
        folded = comb_op(folded, p)
    result = TaskResult(worker_id=worker_id, gradient=folded, batch_size=total,
                        model_version=model_version, submit_time=ctx.now(),
                        dispatch_time=dispatch_time)
    with ctx.lock:
        ctx.in_flight += 1
    ctx.submit(result)


@dataclass
class EngineConfig:
    workers: int
    iterations: int
    clock: str = "virtual"
    multipliers: Sequence[float] | None = None
    task_cost: float | Sequence[float] = 1.0
    duration_jitter: float = 0.0
    jitter_seed: int = 0
    eval_fn: Callable[[np.ndarray], float] | None = None
    eval_every: int = 10
    stop_error: float | None = None
    record_iterates: bool = False
    collect_poll_s: float = 0.05

    def multiplier(self, worker_id: int) -> float:
        if self.multipliers is None:
            return 1.0
        return float(self.multipliers[worker_id])

    def nominal_cost(self, seq: int) -> float:
        if isinstance(self.task_cost, (int, float)):
            return float(self.task_cost)
        return float(self.task_cost[seq % len(self.task_cost)])


@dataclass
class RunResult:
    final_w: np.ndarray
    metrics: list
    trace: RunTrace
    updates_applied: int
    stopped_early: bool
    ctx: AsyncContext
    iterates: list | None = None
    elapsed_wall_s: float = 0.0


def run(config: EngineConfig, program, barrier: ConsistencyModel) -> RunResult:
    """Drive a full run and return its metrics, trace, and final model."""
    if config.clock == "virtual":
        return _run_virtual(config, program, barrier)
    if config.clock == "wall":
        return _run_wall(config, program, barrier)
    raise ValueError(f"unknown clock {config.clock!r}")


class _Emitter:
    """Shared metrics plumbing for both clock drivers."""

    def __init__(self, config: EngineConfig, virtual: bool):
        self.config = config
        self.virtual = virtual
        self.t0 = time.perf_counter()
        self.metrics = []
        self.iterates = [] if config.record_iterates else None
        self.last_error = None

    def wall(self) -> float:
        return time.perf_counter() - self.t0

    def initial(self, w: np.ndarray):
        err = self.config.eval_fn(w) if self.config.eval_fn else None
        self.last_error = err
        self.metrics.append(MetricsRecord(
            wall_time_s=self.wall(), virtual_time=0.0 if self.virtual else None,
            server_version=0, worker_id=-1, staleness=None,
            objective_error=err, wait_time_s=None))

    def update(self, now: float, version: int, result: TaskResult,
               staleness: int, w: np.ndarray) -> float | None:
        cfg = self.config
        err = None
        due = version % cfg.eval_every == 0 or version == cfg.iterations
        if cfg.eval_fn is not None and due:
            err = cfg.eval_fn(w)
            self.last_error = err
        self.metrics.append(MetricsRecord(
            wall_time_s=self.wall(), virtual_time=now if self.virtual else None,
            server_version=version, worker_id=result.worker_id,
            staleness=staleness, objective_error=err, wait_time_s=None))
        if self.iterates is not None:
            self.iterates.append(np.array(w))
        return err

    def wait(self, now: float, version: int, worker_id: int, submitted: float):
        self.metrics.append(record_wait_time(
            worker_id, submitted, now, server_version=version,
            wall_time_s=self.wall(), virtual_time=now if self.virtual else None))


def _check_finite(w: np.ndarray, version: int):
    if not np.all(np.isfinite(w)):
        raise DivergenceError(f"non-finite model after update {version}")


def _run_virtual(config: EngineConfig, program, barrier: ConsistencyModel) -> RunResult:
    stat = StatTable(config.workers)
    store = VersionStore(program.initial_w, getattr(program, "n_samples", 0))
    ctx = AsyncContext(stat, store)
    clock_t = [0.0]
    ctx._now = lambda: clock_t[0]
    emit = _Emitter(config, virtual=True)
    emit.initial(store.value())

    events = []  # (completion_time, dispatch_seq, worker_id, result)
    dispatch_seq = itertools.count()
    jitter_rng = np.random.default_rng(config.jitter_seed)

    def dispatch(admitted: set):
        now = clock_t[0]
        avail_before = len(stat.available_ids())
        for wid in sorted(admitted):
            st = stat[wid]
            seq = next(dispatch_seq)
            if st.last_submit_time is not None:
                emit.wait(now, ctx.server_version, wid, st.last_submit_time)
            try:
                spec = program.prepare_task(wid, ctx)
                payload = program.execute_task(spec)
            except EngineError:
                raise
            except Exception:
                stat.note_failure(wid)
                ctx.trace.failures.append((now, wid))
                continue
            duration = config.nominal_cost(seq) * config.multiplier(wid)
            if config.duration_jitter:
                duration *= 1.0 + config.duration_jitter * jitter_rng.uniform(-1.0, 1.0)
            result = TaskResult(
                worker_id=wid, gradient=payload.gradient,
                batch_size=payload.batch_size, model_version=ctx.server_version,
                submit_time=now + duration, dispatch_time=now,
                history_gradient=payload.history_gradient,
                sample_indices=payload.sample_indices)
            stat.note_dispatch(wid, ctx.server_version)
            ctx.in_flight += 1
            ctx.trace.dispatches.append(DispatchEvent(
                time=now, worker_id=wid, version=ctx.server_version,
                seq=seq, available_before=avail_before))
            heapq.heappush(events, (result.submit_time, seq, wid, result))

    updates = 0
    stopped = False
    dispatch(async_barrier(barrier, ctx))
    if not events and not ctx.has_next():
        raise DeadlockError("no worker admitted at start")

    while updates < config.iterations and not stopped:
        if events:
            t, _, _, result = heapq.heappop(events)
            clock_t[0] = t
            ctx.submit(result)
        elif not ctx.has_next():
            raise DeadlockError(
                f"stalled at update {updates}: nothing in flight, queue empty")
        while ctx.has_next() and updates < config.iterations:
            result = ctx.async_collect()
            staleness = ctx.server_version - result.model_version
            new_w = program.consume(result, ctx)
            if new_w is None:
                continue
            _check_finite(new_w, updates + 1)
            version = ctx.server_update(new_w)
            updates += 1
            err = emit.update(clock_t[0], version, result, staleness, store.value())
            if (config.stop_error is not None and err is not None
                    and err < config.stop_error):
                stopped = True
                break
        if updates >= config.iterations or stopped:
            break
        admitted = async_barrier(barrier, ctx)
        if admitted:
            dispatch(admitted)
        if not events and not ctx.has_next():
            raise DeadlockError(
                f"stalled at update {updates}: barrier admits no worker "
                f"({stat.active_count()} active of {len(stat)})")

    emit_result = RunResult(
        final_w=np.array(store.value()), metrics=emit.metrics, trace=ctx.trace,
        updates_applied=updates, stopped_early=stopped, ctx=ctx,
        iterates=emit.iterates, elapsed_wall_s=emit.wall())
    return emit_result


def _run_wall(config: EngineConfig, program, barrier: ConsistencyModel) -> RunResult:
    stat = StatTable(config.workers)
    store = VersionStore(program.initial_w, getattr(program, "n_samples", 0))
    ctx = AsyncContext(stat, store)
    t0 = time.perf_counter()
    ctx._now = lambda: time.perf_counter() - t0
    emit = _Emitter(config, virtual=False)
    emit.initial(store.value())

    inboxes = [_Fifo() for _ in range(config.workers)]
    dispatch_seq = itertools.count()

    def worker_loop(wid: int):
        mult = config.multiplier(wid)
        while True:
            item = inboxes[wid].get(timeout=1.0)
            if item is None:
                continue
            if item == "stop":
                return
            spec, dispatch_time = item
            started = time.perf_counter()
            try:
                payload = program.execute_task(spec)
            except Exception:
                with ctx.lock:
                    stat.note_failure(wid)
                    ctx.trace.failures.append((ctx.now(), wid))
                    ctx.in_flight -= 1
                continue
            elapsed = time.perf_counter() - started
            if mult > 1.0:
                time.sleep((mult - 1.0) * elapsed)
            ctx.submit(TaskResult(
                worker_id=wid, gradient=payload.gradient,
                batch_size=payload.batch_size, model_version=spec_version(spec),
                submit_time=ctx.now(), dispatch_time=dispatch_time,
                history_gradient=payload.history_gradient,
                sample_indices=payload.sample_indices))

    def spec_version(spec) -> int:
        return getattr(spec, "version", 0)

    threads = [threading.Thread(target=worker_loop, args=(i,), daemon=True)
               for i in range(config.workers)]
    for th in threads:
        th.start()

    def dispatch(admitted: set):
        now = ctx.now()
        with ctx.lock:
            avail_before = len(stat.available_ids())
            for wid in sorted(admitted):
                st = stat[wid]
                seq = next(dispatch_seq)
                if st.last_submit_time is not None:
                    emit.wait(now, ctx.server_version, wid, st.last_submit_time)
                spec = program.prepare_task(wid, ctx)
                stat.note_dispatch(wid, ctx.server_version)
                ctx.in_flight += 1
                ctx.trace.dispatches.append(DispatchEvent(
                    time=now, worker_id=wid, version=ctx.server_version,
                    seq=seq, available_before=avail_before))
                inboxes[wid].put((spec, now))

    updates = 0
    stopped = False
    try:
        dispatch(async_barrier(barrier, ctx))
        if ctx.in_flight == 0:
            raise DeadlockError("no worker admitted at start")
        while updates < config.iterations and not stopped:
            result = ctx.async_collect(timeout=config.collect_poll_s)
            if result is None:
                with ctx.lock:
                    starved = ctx.in_flight == 0 and not ctx.has_next()
                if starved:
                    admitted = async_barrier(barrier, ctx)
                    if admitted:
                        dispatch(admitted)
                    else:
                        raise DeadlockError(
                            f"stalled at update {updates}: barrier admits no worker "
                            f"({stat.active_count()} active of {len(stat)})")
                continue
            staleness = ctx.server_version - result.model_version
            new_w = program.consume(result, ctx)
            if new_w is not None:
                _check_finite(new_w, updates + 1)
                version = ctx.server_update(new_w)
                updates += 1
                err = emit.update(ctx.now(), version, result, staleness, store.value())
                if (config.stop_error is not None and err is not None
                        and err < config.stop_error):
                    stopped = True
            if updates < config.iterations and not stopped:
                admitted = async_barrier(barrier, ctx)
                if admitted:
                    dispatch(admitted)
    finally:
        for box in inboxes:
            box.put("stop")
        for th in threads:
            th.join(timeout=5.0)

    return RunResult(
        final_w=np.array(store.value()), metrics=emit.metrics, trace=ctx.trace,
        updates_applied=updates, stopped_early=stopped, ctx=ctx,
        iterates=emit.iterates, elapsed_wall_s=emit.wall())
