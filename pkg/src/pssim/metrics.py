"""Run metrics: typed records, the CSV schema, and curve post-processing.

Two kinds of rows share one schema.  An update row is emitted per server
update (objective error filled every eval interval); a wait row is emitted
when a worker is re-dispatched and records how long it sat between submitting
a result and receiving new work.  Floats are written with 9 significant
digits and empty fields stay empty, so files round-trip exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

CSV_HEADER = ("wall_time_s", "virtual_time", "server_version", "worker_id",
              "staleness", "objective_error", "wait_time_s")


@dataclass(frozen=True)
class MetricsRecord:
    wall_time_s: float
    virtual_time: float | None
    server_version: int
    worker_id: int
    staleness: int | None
    objective_error: float | None
    wait_time_s: float | None

    @property
    def kind(self) -> str:
        return "wait" if self.wait_time_s is not None else "update"

    def time(self, clock: str = "virtual") -> float:
        if clock == "virtual" and self.virtual_time is not None:
            return self.virtual_time
        return self.wall_time_s


def record_wait_time(worker_id: int, submit_t: float, redispatch_t: float, *,
                     server_version: int, wall_time_s: float | None = None,
                     virtual_time: float | None = None) -> MetricsRecord:
    """Wait row for one worker: redispatch time minus submit time."""
    wait = redispatch_t - submit_t
    if wait < 0:
        raise ValueError(f"negative wait: submit {submit_t} after redispatch {redispatch_t}")
    return MetricsRecord(
        wall_time_s=wall_time_s if wall_time_s is not None else redispatch_t,
        virtual_time=virtual_time,
        server_version=server_version,
        worker_id=worker_id,
        staleness=None,
        objective_error=None,
        wait_time_s=wait,
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def _parse_float(tok: str) -> float | None:
    return float(tok) if tok else None


def write_metrics(records, path_or_file):
    if hasattr(path_or_file, "write"):
        _write(records, path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(records, fh)


def _write(records, fh):
    writer = csv.writer(fh)
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([
            _fmt(r.wall_time_s), _fmt(r.virtual_time), r.server_version,
            r.worker_id, _fmt(r.staleness), _fmt(r.objective_error),
            _fmt(r.wait_time_s),
        ])


def read_metrics(path_or_file):
    if hasattr(path_or_file, "read"):
        return _read(path_or_file)
    with open(path_or_file, newline="") as fh:
        return _read(fh)


def _read(fh):
    reader = csv.reader(fh)
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    out = []
    for row in reader:
        if not row:
            continue
        wall, vt, ver, wid, stale, err, wait = row
        out.append(MetricsRecord(
            wall_time_s=float(wall),
            virtual_time=_parse_float(vt),
            server_version=int(ver),
            worker_id=int(wid),
            staleness=int(stale) if stale else None,
            objective_error=_parse_float(err),
            wait_time_s=_parse_float(wait),
        ))
    return out


def error_curve(records, baseline: float = 0.0, clock: str = "virtual"):
    """(time, error) pairs from update rows that carry an objective value.

    The stored value minus `baseline`; runs that already stored the error
    directly pass baseline 0.
    """
    curve = []
    for r in records:
        if r.kind == "update" and r.objective_error is not None:
            curve.append((r.time(clock), r.objective_error - baseline))
    return curve


def smoothed_error_curve(records, window: int = 5, baseline: float = 0.0,
                         clock: str = "virtual"):
    """Trailing moving average (up to `window` points) of the error curve."""
    raw = error_curve(records, baseline=baseline, clock=clock)
    out = []
    for i, (t, _) in enumerate(raw):
        lo = max(0, i - window + 1)
        vals = [e for _, e in raw[lo:i + 1]]
        out.append((t, sum(vals) / len(vals)))
    return out


def time_to_target_error(records, target: float, window: int = 5,
                         baseline: float = 0.0, clock: str = "virtual") -> float | None:
    """First time the smoothed error drops below target; None if it never does."""
    for t, e in smoothed_error_curve(records, window=window, baseline=baseline, clock=clock):
        if e < target:
            return t
    return None


def mean_wait_time(records) -> float:
    waits = [r.wait_time_s for r in records if r.kind == "wait"]
    if not waits:
        return 0.0
    return sum(waits) / len(waits)


def final_error(records) -> float:
    err = math.nan
    for r in records:
        if r.kind == "update" and r.objective_error is not None:
            err = r.objective_error
    return err
