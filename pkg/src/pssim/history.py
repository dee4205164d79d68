"""Refcounted store of model versions and per-sample history recovery.

Instead of keeping one stored gradient per sample (O(n d) memory), the server
keeps the handful of model versions that any sample last saw, plus a map
sample -> version.  A sample's history gradient is recomputed on demand from
the version it was last evaluated against, which by construction equals the
gradient an explicit per-sample table would have stored.

A version stays alive while some sample still points at it or while it is the
current model; the moment its refcount reaches zero it is evicted.  Version 0
is the initial model, so every sample has a well-defined history from the
first step.
"""

from __future__ import annotations

import numpy as np

from .linalg import LEAST_SQUARES, DataPartition


class VersionStore:
    """Immutable model versions with per-sample last-touched bookkeeping."""

    def __init__(self, initial_w: np.ndarray, n_samples: int):
        if n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        w0 = np.array(initial_w, dtype=np.float64)
        w0.setflags(write=False)
        self._versions = {0: w0}
        self._refcounts = {0: n_samples + 1}  # every sample plus "current"
        self._last_touched = np.zeros(n_samples, dtype=np.int64)
        self._current = 0
        self._next_id = 1
        self.n_samples = n_samples

    @property
    def current_version(self) -> int:
        return self._current

    def publish(self, w: np.ndarray) -> int:
        """Freeze w as the next version and make it current."""
        vid = self._next_id
        self._next_id += 1
        frozen = np.array(w, dtype=np.float64)
        frozen.setflags(write=False)
        self._versions[vid] = frozen
        self._refcounts[vid] = 1  # the "current" reference
        old = self._current
        self._current = vid
        self._release(old)
        return vid

    def value(self) -> np.ndarray:
        return self._versions[self._current]

    def get(self, version_id: int) -> np.ndarray:
        return self._versions[version_id]

    def __contains__(self, version_id: int) -> bool:
        return version_id in self._versions

    def last_touched(self, index: int) -> int:
        return int(self._last_touched[index])

    def value_at(self, index: int) -> np.ndarray:
        """Model version this sample's gradient was last evaluated against."""
        return self._versions[self._last_touched[index]]

    def touch(self, indices, version_id: int, value: np.ndarray | None = None):
        """Mark samples as last evaluated at version_id; evict orphans.

        A version whose refcount hit zero while a task computed against it is
        no longer in the store when the task's result is finally consumed; in
        that case the caller passes the model vector it dispatched with and
        the id is re-registered under the same number.
        """
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            return
        if version_id not in self._versions:
            if value is None:
                raise KeyError(f"version {version_id} is not live")
            if version_id >= self._next_id:
                raise KeyError(f"version {version_id} was never published")
            frozen = np.array(value, dtype=np.float64)
            frozen.setflags(write=False)
            self._versions[version_id] = frozen
            self._refcounts[version_id] = 0
        old_ids, old_counts = np.unique(self._last_touched[idx], return_counts=True)
        self._last_touched[idx] = version_id
        self._refcounts[version_id] += int(idx.size)
        for vid, cnt in zip(old_ids, old_counts):
            self._release(int(vid), int(cnt))

    def _release(self, version_id: int, count: int = 1):
        left = self._refcounts[version_id] - count
        if left < 0:
            raise RuntimeError(f"refcount underflow on version {version_id}")
        if left == 0:
            del self._refcounts[version_id]
            del self._versions[version_id]
        else:
            self._refcounts[version_id] = left

    def refcount(self, version_id: int) -> int:
        return self._refcounts.get(version_id, 0)

    def live_versions(self) -> int:
        return len(self._versions)

    def check_invariants(self):
        """Refcounts must equal touch counts plus the current marker."""
        expect = {}
        ids, counts = np.unique(self._last_touched, return_counts=True)
        for vid, cnt in zip(ids, counts):
            expect[int(vid)] = int(cnt)
        expect[self._current] = expect.get(self._current, 0) + 1
        if expect != self._refcounts:
            raise AssertionError(f"refcounts {self._refcounts} != expected {expect}")


class DynamicBroadcast:
    """Read handle over the store: value() is current, value(i) is history."""

    def __init__(self, store: VersionStore, version_id: int):
        self._store = store
        self.version_id = version_id

    def value(self, index: int | None = None) -> np.ndarray:
        if index is None:
            return self._store.value()
        return self._store.value_at(index)


def async_broadcast(w: np.ndarray, store: VersionStore) -> DynamicBroadcast:
    """Publish w as a new version and hand back a broadcast handle."""
    vid = store.publish(w)
    return DynamicBroadcast(store, vid)


def recover_history_gradient(partition: DataPartition, sample: np.ndarray,
                             store: VersionStore, loss=LEAST_SQUARES) -> np.ndarray:
    """Mean of per-sample gradients, each taken at the sample's own last-touched version.

    `sample` holds local indices into the partition; the store is keyed by the
    partition's global offsets.
    """
    if len(sample) == 0:
        raise ValueError("history gradient over an empty sample")
    d = store.value().shape[0]
    acc = np.zeros(d)
    for s in sample:
        w_hist = store.value_at(int(partition.global_offsets[s]))
        loss.accumulate_gradient(partition.rows[s], w_hist, acc)
    acc /= len(sample)
    return acc
