"""Sparse rows, partitioned datasets, and least-squares gradient kernels.

Rows are stored in LIBSVM-style sparse form (sorted index/value pairs plus a
label).  A dataset is a list of partitions; each partition remembers the
global index of every row it holds so that per-sample bookkeeping (gradient
history, in particular) can be keyed on a stable identity regardless of how
the rows were shuffled into partitions.

The loss shipped here is per-sample squared error f(w) = (x'w - y)^2 with
gradient 2 x (x'w - y).  Anything that needs a gradient goes through a loss
object so other losses can be plugged in without touching the callers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DenseVector = np.ndarray


class LibsvmParseError(ValueError):
    """Malformed LIBSVM input; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class SparseRow:
    """One sample: sorted zero-based feature indices, values, and a label."""

    indices: np.ndarray
    values: np.ndarray
    label: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        if idx.size and idx[0] < 0:
            raise ValueError("indices must be non-negative")
        if not np.all(np.isfinite(val)) or not np.isfinite(self.label):
            raise ValueError("row contains non-finite values")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "label", float(self.label))


@dataclass(frozen=True)
class DataPartition:
    """A contiguous unit of work: rows plus their global sample indices."""

    partition_id: int
    rows: tuple
    global_offsets: np.ndarray
    _dense_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        off = np.asarray(self.global_offsets, dtype=np.int64)
        if len(self.rows) != off.size:
            raise ValueError("global_offsets must match row count")
        off.setflags(write=False)
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "global_offsets", off)

    def __len__(self) -> int:
        return len(self.rows)

    def dense(self, d: int):
        """Dense (A, y) view of this partition, cached per width d."""
        cached = self._dense_cache.get(d)
        if cached is None:
            a = np.zeros((len(self.rows), d))
            y = np.empty(len(self.rows))
            for i, row in enumerate(self.rows):
                a[i, row.indices] = row.values
                y[i] = row.label
            a.setflags(write=False)
            y.setflags(write=False)
            cached = (a, y)
            self._dense_cache[d] = cached
        return cached


@dataclass(frozen=True)
class Dataset:
    """Partitioned dataset: n samples of width d split into P partitions."""

    partitions: tuple
    n: int
    d: int

    def __post_init__(self):
        object.__setattr__(self, "partitions", tuple(self.partitions))
        sizes = sum(len(p) for p in self.partitions)
        if sizes != self.n:
            raise ValueError(f"partition sizes sum to {sizes}, expected n={self.n}")
        seen = np.concatenate(
            [p.global_offsets for p in self.partitions]
        ) if self.partitions else np.empty(0, dtype=np.int64)
        if self.n and (np.unique(seen).size != self.n or seen.min() != 0 or seen.max() != self.n - 1):
            raise ValueError("global offsets must cover [0, n) exactly once")

    @property
    def P(self) -> int:
        return len(self.partitions)

    def all_rows(self):
        for p in self.partitions:
            yield from p.rows


class SquaredErrorLoss:
    """Per-sample squared error (x'w - y)^2."""

    def sample_value(self, row: SparseRow, w: DenseVector) -> float:
        r = float(row.values @ w[row.indices]) - row.label
        return r * r

    def sample_gradient(self, row: SparseRow, w: DenseVector) -> DenseVector:
        r = float(row.values @ w[row.indices]) - row.label
        g = np.zeros(w.shape[0])
        g[row.indices] = 2.0 * r * row.values
        return g

    def accumulate_gradient(self, row: SparseRow, w: DenseVector, acc: DenseVector):
        """Add this sample's gradient into acc without a temporary."""
        r = float(row.values @ w[row.indices]) - row.label
        acc[row.indices] += 2.0 * r * row.values


LEAST_SQUARES = SquaredErrorLoss()


def sample_gradient(row: SparseRow, w: DenseVector, loss=LEAST_SQUARES) -> DenseVector:
    """Gradient of the per-sample loss at w; dense result of len(w)."""
    return loss.sample_gradient(row, w)


def minibatch_gradient(partition: DataPartition, sample: np.ndarray,
                       w: DenseVector, loss=LEAST_SQUARES) -> DenseVector:
    """Mean gradient over the sampled rows: (1/|S|) sum of sample gradients.

    `sample` holds local row indices into the partition.
    """
    if len(sample) == 0:
        raise ValueError("minibatch gradient over an empty sample")
    acc = np.zeros(w.shape[0])
    for s in sample:
        loss.accumulate_gradient(partition.rows[s], w, acc)
    acc /= len(sample)
    return acc


def sample_minibatch(partition: DataPartition, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Draw a without-replacement minibatch of size max(1, round(rate * size)).

    Returns sorted local indices.  Rounding is half-up, so a rate that lands
    exactly between two sizes picks the larger one.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"sampling rate must be in (0, 1], got {rate}")
    size = len(partition)
    if size == 0:
        raise ValueError("cannot sample from an empty partition")
    k = max(1, int(np.floor(rate * size + 0.5)))
    picked = rng.choice(size, size=k, replace=False)
    return np.sort(picked)


def objective(dataset: Dataset, w: DenseVector, workers: int = 1) -> float:
    """(1/workers) * sum of squared residuals over the whole dataset.

    The normalization mirrors treating the global objective as the average of
    per-worker local sums; comparisons are only meaningful between values
    computed with the same worker count.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    total = 0.0
    for p in dataset.partitions:
        a, y = p.dense(dataset.d)
        r = a @ w - y
        total += float(r @ r)
    return total / workers


def partition(rows: Sequence[SparseRow], P: int, seed: int, d: int | None = None) -> Dataset:
    """Shuffle rows with a seeded RNG and deal them round-robin into P partitions.

    Partition j receives shuffled positions j, j+P, j+2P, ...; remainders go
    to the lowest partition ids.  Global offsets keep each row's original
    index so per-sample state survives the shuffle.
    """
    rows = list(rows)
    n = len(rows)
    if P < 1:
        raise ValueError("P must be >= 1")
    if P > n:
        raise ValueError(f"cannot split {n} rows into {P} partitions")
    if d is None:
        d = infer_width(rows)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    parts = []
    for j in range(P):
        take = perm[j::P]
        parts.append(DataPartition(
            partition_id=j,
            rows=tuple(rows[i] for i in take),
            global_offsets=take.astype(np.int64),
        ))
    return Dataset(partitions=tuple(parts), n=n, d=d)


def infer_width(rows: Iterable[SparseRow]) -> int:
    d = 0
    for row in rows:
        if row.indices.size:
            d = max(d, int(row.indices[-1]) + 1)
    return d


def parse_libsvm(source, d: int | None = None) -> Dataset:
    """Parse LIBSVM text into an unpartitioned dataset (single partition).

    Accepts a string, an open text file, or any iterable of lines.  Feature
    indices are 1-based on disk and converted to sorted 0-based indices here.
    Blank lines are skipped; anything else malformed raises
    LibsvmParseError with the offending line number.
    """
    if isinstance(source, str):
        lines = io.StringIO(source)
    else:
        lines = source
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            label = float(fields[0])
        except ValueError:
            raise LibsvmParseError(f"bad label {fields[0]!r}", lineno) from None
        idx = []
        val = []
        for tok in fields[1:]:
            part = tok.split(":")
            if len(part) != 2:
                raise LibsvmParseError(f"bad feature token {tok!r}", lineno)
            try:
                i = int(part[0])
                v = float(part[1])
            except ValueError:
                raise LibsvmParseError(f"bad feature token {tok!r}", lineno) from None
            if i < 1:
                raise LibsvmParseError(f"feature index {i} is not 1-based positive", lineno)
            idx.append(i - 1)
            val.append(v)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise LibsvmParseError("feature indices must be strictly increasing", lineno)
        try:
            rows.append(SparseRow(np.array(idx, dtype=np.int64),
                                  np.array(val, dtype=np.float64), label))
        except ValueError as exc:
            raise LibsvmParseError(str(exc), lineno) from None
    if not rows:
        raise LibsvmParseError("no data rows found", 0)
    n = len(rows)
    width = infer_width(rows)
    if d is not None:
        if d < width:
            raise ValueError(f"width override {d} is below max feature index {width}")
        width = d
    part = DataPartition(partition_id=0, rows=tuple(rows),
                         global_offsets=np.arange(n, dtype=np.int64))
    return Dataset(partitions=(part,), n=n, d=width)


def serialize_libsvm(rows: Iterable[SparseRow]) -> str:
    """Canonical LIBSVM text: 1-based indices, %.17g values, one row per line."""
    out = []
    for row in rows:
        toks = [f"{row.label:.17g}"]
        toks.extend(f"{int(i) + 1}:{v:.17g}" for i, v in zip(row.indices, row.values))
        out.append(" ".join(toks))
    return "\n".join(out) + ("\n" if out else "")


def write_libsvm(rows: Iterable[SparseRow], path):
    with open(path, "w") as fh:
        fh.write(serialize_libsvm(rows))


def make_synthetic(n: int, d: int, seed: int, noise: float = 0.0):
    """Dense Gaussian design with a planted solution.

    Returns (rows, w_star) where labels are A @ w_star plus optional Gaussian
    noise.  With noise == 0 the planted solution attains zero residual, which
    is handy when an experiment needs an exactly attainable optimum.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, d))
    w_star = rng.standard_normal(d)
    y = a @ w_star
    if noise:
        y = y + noise * rng.standard_normal(n)
    cols = np.arange(d, dtype=np.int64)
    rows = tuple(SparseRow(cols, a[i], float(y[i])) for i in range(n))
    return rows, w_star
