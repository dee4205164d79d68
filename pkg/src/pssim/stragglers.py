"""Straggler injection: per-worker slowdown multipliers.

Two models.  CDS (controlled delay, single worker) slows one chosen worker by
a factor 1 + intensity, so intensity 1.0 means half speed.  PCS (probabilistic
cluster stragglers) slows a quarter of the fleet: of floor(0.25 m) stragglers,
80% (rounded) draw a uniform multiplier in [1.5, 2.5] and the rest are
long-tail workers drawn in (2.5, 10].  Both models are pure descriptions;
the engine applies the multiplier to task durations (virtual clock) or sleeps
the extra fraction of measured compute time (wall clock).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIFORM_LOW, UNIFORM_HIGH = 1.5, 2.5
LONG_TAIL_HIGH = 10.0
STRAGGLER_FRACTION = 0.25
UNIFORM_SHARE = 0.8


@dataclass(frozen=True)
class DelayModel:
    kind: str                      # "none" | "cds" | "pcs"
    cds_worker_id: int | None = None
    cds_intensity: float = 0.0
    pcs_seed: int | None = None
    per_worker_multiplier: tuple | None = None

    def multipliers(self, workers: int) -> np.ndarray:
        """Materialize one multiplier per worker id."""
        if self.kind == "none":
            return np.ones(workers)
        if self.kind == "cds":
            if not 0 <= self.cds_worker_id < workers:
                raise ValueError(
                    f"cds worker {self.cds_worker_id} out of range for m={workers}")
            mult = np.ones(workers)
            mult[self.cds_worker_id] = 1.0 + self.cds_intensity
            return mult
        if self.kind == "pcs":
            if self.per_worker_multiplier is not None and \
                    len(self.per_worker_multiplier) == workers:
                return np.array(self.per_worker_multiplier)
            return generate_pcs(workers, self.pcs_seed).multipliers(workers)
        raise ValueError(f"unknown delay kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "cds":
            return f"cds:w={self.cds_worker_id},i={self.cds_intensity:g}"
        return f"pcs:seed={self.pcs_seed}"


def no_delay() -> DelayModel:
    return DelayModel(kind="none")


def apply_cds(worker_id: int, intensity: float) -> DelayModel:
    """Slow one worker down by 1 + intensity; everyone else runs at speed 1."""
    if intensity < 0:
        raise ValueError("intensity must be non-negative")
    if worker_id < 0:
        raise ValueError("worker id must be non-negative")
    return DelayModel(kind="cds", cds_worker_id=worker_id,
                      cds_intensity=float(intensity))


def generate_pcs(workers: int, seed: int) -> DelayModel:
    """Seeded cluster-straggler assignment for a fleet of `workers`.

    floor(0.25 m) stragglers; round(0.8 k) of them uniform in [1.5, 2.5], the
    remainder long tail in (2.5, 10].  Needs at least 4 workers so that the
    straggler count is positive.
    """
    if workers < 4:
        raise ValueError(f"pcs needs at least 4 workers, got {workers}")
    count = int(np.floor(STRAGGLER_FRACTION * workers))
    uniform_count = int(np.floor(UNIFORM_SHARE * count + 0.5))
    tail_count = count - uniform_count
    rng = np.random.default_rng(seed)
    ids = rng.choice(workers, size=count, replace=False)
    mult = np.ones(workers)
    for wid in ids[:uniform_count]:
        mult[wid] = rng.uniform(UNIFORM_LOW, UNIFORM_HIGH)
    for wid in ids[uniform_count:]:
        mult[wid] = rng.uniform(UNIFORM_HIGH, LONG_TAIL_HIGH)
    return DelayModel(kind="pcs", pcs_seed=seed,
                      per_worker_multiplier=tuple(mult))


def straggler_classes(model: DelayModel, workers: int):
    """(uniform ids, long-tail ids) under the class bounds above."""
    mult = model.multipliers(workers)
    uniform = [i for i, c in enumerate(mult) if UNIFORM_LOW <= c <= UNIFORM_HIGH and c != 1.0]
    tail = [i for i, c in enumerate(mult) if c > UNIFORM_HIGH]
    return uniform, tail


def parse_delay(spec: str) -> DelayModel:
    """Parse "none", "cds:w=<id>,i=<intensity>", or "pcs:seed=<seed>"."""
    name, _, rest = spec.partition(":")
    if name == "none":
        if rest:
            raise ValueError(f"'none' takes no parameters, got {spec!r}")
        return no_delay()
    params = {}
    if rest:
        for kv in rest.split(","):
            key, sep, value = kv.partition("=")
            if not sep:
                raise ValueError(f"bad delay parameter {kv!r} in {spec!r}")
            params[key.strip()] = value.strip()
    if name == "cds":
        try:
            return apply_cds(int(params["w"]), float(params["i"]))
        except KeyError as exc:
            raise ValueError(f"cds spec needs w and i, got {spec!r}") from exc
    if name == "pcs":
        try:
            return DelayModel(kind="pcs", pcs_seed=int(params["seed"]))
        except KeyError as exc:
            raise ValueError(f"pcs spec needs seed, got {spec!r}") from exc
    raise ValueError(f"unknown delay model {name!r}")
