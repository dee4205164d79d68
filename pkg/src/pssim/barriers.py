"""Barrier control: pluggable predicates deciding which workers to dispatch.

A predicate sees a read-only snapshot of the worker table plus the length of
the result queue and returns the set of worker ids to dispatch now.  Models
are pure; all state lives in the engine.  Each model is registered under a
name so runs can be configured from strings like "ssp:s=4".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable


@dataclass(frozen=True)
class BarrierView:
    """What a predicate may look at: worker statuses and queue length."""

    statuses: tuple
    queue_length: int

    def available_ids(self):
        return {s.worker_id for s in self.statuses if s.available}

    def in_flight(self):
        return [s for s in self.statuses if not s.available and not s.failed]


@dataclass(frozen=True)
class ConsistencyModel:
    name: str
    admit: Callable[[BarrierView], set]


def bsp() -> ConsistencyModel:
    """Lockstep: dispatch everyone only when all workers sit idle and the
    queue has been fully drained."""

    def admit(view: BarrierView) -> set:
        avail = view.available_ids()
        if len(avail) == len(view.statuses) and view.queue_length == 0:
            return avail
        return set()

    return ConsistencyModel("bsp", admit)


def asp() -> ConsistencyModel:
    """No barrier: every available worker is dispatched immediately."""

    def admit(view: BarrierView) -> set:
        return view.available_ids()

    return ConsistencyModel("asp", admit)


def ssp(s: int) -> ConsistencyModel:
    """Bounded staleness: never let a consumed result be more than s updates old.

    Admission uses worst-case accounting: a task in flight can gain one unit
    of staleness from every other concurrent task, so we only admit workers
    while max_staleness + (tasks in flight after admission) - 1 <= s.  This
    keeps the bound even when completions interleave adversarially; it is
    stricter than gating on max staleness alone, which cannot hold the bound
    once more than two tasks overlap.
    """
    if s < 1:
        raise ValueError("staleness bound must be >= 1")

    def admit(view: BarrierView) -> set:
        busy = view.in_flight()
        max_stale = max((b.staleness for b in busy), default=0)
        room = s + 1 - len(busy) - max_stale
        if room <= 0:
            return set()
        return set(sorted(view.available_ids())[:room])

    return ConsistencyModel(f"ssp:s={s}", admit)


def throttled_release(k: int) -> ConsistencyModel:
    """Batch release: dispatch all available workers once at least k are idle."""
    if k < 1:
        raise ValueError("release threshold must be >= 1")

    def admit(view: BarrierView) -> set:
        avail = view.available_ids()
        if len(avail) >= k:
            return avail
        return set()

    return ConsistencyModel(f"throttled:k={k}", admit)


_REGISTRY: dict[str, Callable[..., ConsistencyModel]] = {}


def register_model(name: str, factory: Callable[..., ConsistencyModel]):
    if name in _REGISTRY:
        raise ValueError(f"barrier {name!r} already registered")
    _REGISTRY[name] = factory


register_model("bsp", bsp)
register_model("asp", asp)
register_model("ssp", ssp)
register_model("throttled", throttled_release)


def registered_models():
    return sorted(_REGISTRY)


def parse_barrier(spec: str) -> ConsistencyModel:
    """Build a model from a spec string: name[:key=value[,key=value...]].

    Examples: "bsp", "asp", "ssp:s=4", "throttled:k=4".
    """
    name, _, rest = spec.partition(":")
    factory = _REGISTRY.get(name)
    if factory is None:
        raise ValueError(f"unknown barrier {name!r}; known: {registered_models()}")
    kwargs = {}
    if rest:
        for kv in rest.split(","):
            key, sep, value = kv.partition("=")
            if not sep:
                raise ValueError(f"bad barrier parameter {kv!r} in {spec!r}")
            kwargs[key.strip()] = int(value)
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad parameters for barrier {name!r}: {exc}") from None
