import numpy as np
import pytest

from pssim.linalg import (
    LEAST_SQUARES,
    SparseRow,
    make_synthetic,
    partition,
    sample_gradient,
    sample_minibatch,
)
from pssim.optimizers import SgdState, sgd_step


@pytest.fixture
def tiny_rows():
    # 4 dense rows in R^3 with hand-checkable values
    data = [
        ([0, 1, 2], [1.0, 2.0, 0.0], 1.0),
        ([0, 1, 2], [0.0, 1.0, 1.0], 2.0),
        ([0, 1, 2], [1.0, 0.0, 1.0], 0.0),
        ([0, 1, 2], [2.0, 1.0, 0.0], -1.0),
    ]
    return [SparseRow(np.array(i), np.array(v), y) for i, v, y in data]


@pytest.fixture
def small_dataset():
    rows, _ = make_synthetic(64, 8, seed=42, noise=0.1)
    return partition(rows, 4, seed=0)


def rows_as_dense(dataset):
    a = np.zeros((dataset.n, dataset.d))
    y = np.zeros(dataset.n)
    for p in dataset.partitions:
        for row, g in zip(p.rows, p.global_offsets):
            a[g, row.indices] = row.values
            y[g] = row.label
    return a, y


# Reference replays shared by the optimizer tests and the acceptance suite.

def serial_sgd_replay(dataset, rate, alpha0, schedule, seed, iters, w0):
    """Single-worker lockstep replay with the engine's own draw streams."""
    seqs = np.random.SeedSequence(seed).spawn(dataset.P)
    rngs = [np.random.default_rng(s) for s in seqs]
    state = SgdState(w=np.array(w0, dtype=float), alpha0=alpha0, schedule=schedule)
    iterates = []
    d = dataset.d
    for _ in range(iters):
        acc = np.zeros(d)
        count = 0
        for pid in range(dataset.P):
            part = dataset.partitions[pid]
            local = sample_minibatch(part, rate, rngs[pid])
            for s in local:
                LEAST_SQUARES.accumulate_gradient(part.rows[s], state.w, acc)
            count += len(local)
        sgd_step(state, acc / count)
        iterates.append(np.array(state.w))
    return iterates


def table_saga_replay(dataset, rate, alpha, seed, iters, w0):
    """Explicit per-sample gradient table, the O(n d) memory reference."""
    part = dataset.partitions[0]
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    n, d = dataset.n, dataset.d
    table = np.zeros((n, d))
    for s, row in enumerate(part.rows):
        table[part.global_offsets[s]] = sample_gradient(row, np.asarray(w0), LEAST_SQUARES)
    avg = table.mean(axis=0)
    w = np.array(w0, dtype=float)
    iterates = []
    for _ in range(iters):
        local = sample_minibatch(part, rate, rng)
        glob = part.global_offsets[local]
        fresh = np.stack([sample_gradient(part.rows[s], w, LEAST_SQUARES)
                          for s in local])
        g = fresh.mean(axis=0)
        h = table[glob].mean(axis=0)
        w = w - alpha * (g - h + avg)
        avg = avg + (len(local) / n) * (g - h)
        table[glob] = fresh
        iterates.append(np.array(w))
    return iterates
