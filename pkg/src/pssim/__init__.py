"""pssim: a single-process simulator for asynchronous parameter servers.

The package models one server and m workers exchanging gradient tasks through
a FIFO result queue, with pluggable barrier predicates (bsp, asp, bounded
staleness, throttled release), gradient-history recovery for variance-reduced
methods, straggler injection, and a deterministic virtual clock next to a
threaded wall clock.
"""

from .barriers import (asp, bsp, parse_barrier, register_model, ssp,
                       throttled_release)
from .engine import (AsyncContext, DeadlockError, DivergenceError,
                     EngineConfig, StatTable, TaskResult, WorkerStatus,
                     async_aggregate, async_barrier, async_reduce, run)
from .history import (DynamicBroadcast, VersionStore, async_broadcast,
                      recover_history_gradient)
from .linalg import (DataPartition, Dataset, SparseRow, make_synthetic,
                     minibatch_gradient, objective, parse_libsvm, partition,
                     sample_gradient, sample_minibatch, serialize_libsvm)
from .metrics import (MetricsRecord, error_curve, read_metrics,
                      record_wait_time, time_to_target_error, write_metrics)
from .optimizers import (AlgorithmConfig, SagaState, SgdState, asaga_step,
                         asgd_step, compute_baseline, run_algorithm,
                         saga_step, sgd_step)
from .stragglers import DelayModel, apply_cds, generate_pcs, parse_delay

__version__ = "0.1.0"
