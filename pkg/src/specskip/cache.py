"""Token-level feature cache with staleness provenance.

Every entry records which verification step produced it; retrieval either
takes the freshest entries by position or deliberately restricts to older
steps for the staleness experiments.  The cache is unbounded: desk-scale
runs stay in the hundreds of tokens.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheUnderflow, RejectedInput


@dataclass
class CachedFeature:
    position: int
    feature: np.ndarray
    step: int
    origin: str  # "verified" or "post-verified"


@dataclass
class FeatureCache:
    entries: dict[int, CachedFeature] = field(default_factory=dict)
    high_water: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def update(cache: FeatureCache, positions, features, step: int, origin: str) -> None:
    """Write entries; later writes to a position overwrite (freshest wins)."""
    positions = list(positions)
    features = list(features)
    if len(positions) != len(features):
        raise RejectedInput("positions and features must align")
    if any(b <= a for a, b in zip(positions, positions[1:])):
        raise RejectedInput("positions must be strictly increasing")
    for pos, feat in zip(positions, features):
        cache.entries[pos] = CachedFeature(position=pos,
                                           feature=np.asarray(feat, dtype=np.float64),
                                           step=step, origin=origin)
    if positions:
        cache.high_water = max(cache.high_water, positions[-1] + 1)


def retrieve_latest(cache: FeatureCache, count: int, as_of_step: int
                    ) -> list[tuple[np.ndarray, int]]:
    """The `count` highest-position entries produced at or before the as-of
    step, in position order, each paired with its staleness lag."""
    if count == 0:
        return []
    usable = [e for e in cache.entries.values() if e.step <= as_of_step]
    if len(usable) < count:
        raise CacheUnderflow(count - len(usable))
    usable.sort(key=lambda e: e.position)
    return [(e.feature, as_of_step - e.step) for e in usable[-count:]]


def retrieve_with_offset(cache: FeatureCache, count: int, extra_staleness: int,
                         as_of_step: int) -> list[tuple[np.ndarray, int]]:
    """Like retrieve_latest, restricted to entries produced at steps no later
    than (latest cached step - extra_staleness)."""
    if extra_staleness < 0:
        raise RejectedInput("extra staleness must be >= 0")
    if count == 0:
        return []
    usable = [e for e in cache.entries.values() if e.step <= as_of_step]
    if not usable:
        raise CacheUnderflow(count)
    cutoff = max(e.step for e in usable) - extra_staleness
    usable = [e for e in usable if e.step <= cutoff]
    if len(usable) < count:
        raise CacheUnderflow(count - len(usable))
    usable.sort(key=lambda e: e.position)
    return [(e.feature, as_of_step - e.step) for e in usable[-count:]]


def dump_csv(cache: FeatureCache, path, as_of_step: int) -> None:
    """Write (position, step, lag) rows for offline staleness analysis."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position", "step", "lag"])
        for pos in sorted(cache.entries):
            entry = cache.entries[pos]
            writer.writerow([pos, entry.step, as_of_step - entry.step])
