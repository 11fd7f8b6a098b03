"""Per-PC and per-set statistics over record tables, plus the four
workload-tuning analyses: bypass candidate ranking, reuse-variance PC
grouping, dominant miss PC, and set hotness.

Everything here is a pure query over an immutable record slice; results are
deterministic with total tie-break orders.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from cacheqa.errors import CacheQAError
from cacheqa.simulator import is_wrong_eviction
from cacheqa.trace_model import to_hex


class PcNotFound(CacheQAError):
    pass


class WorkloadNotFound(CacheQAError):
    pass


class NotEnoughSets(CacheQAError):
    pass


class NoMisses(CacheQAError):
    pass


@dataclass
class PcStats:
    """Aggregate behavior of one program counter within a trace slice.

    Reuse-distance aggregates cover reused records only (absent forward
    distances excluded); std is sample std and absent below 2 samples.
    """

    pc: int
    accesses: int
    hits: int
    misses: int
    miss_rate: float
    mean_accessed_reuse_distance: Optional[float]
    std_accessed_reuse_distance: Optional[float]
    mean_evicted_reuse_distance: Optional[float]
    eviction_count: int
    wrong_evictions: int
    wrong_eviction_pct: float

    @property
    def hit_rate(self) -> float:
        return 100.0 * self.hits / self.accesses if self.accesses else 0.0


@dataclass
class SetStats:
    set_id: int
    accesses: int
    hits: int

    @property
    def hit_rate(self) -> float:
        return 100.0 * self.hits / self.accesses if self.accesses else 0.0


def _mean(values: list) -> Optional[float]:
    return float(np.mean(values)) if values else None


def _std(values: list) -> Optional[float]:
    return float(np.std(values, ddof=1)) if len(values) >= 2 else None


def pc_stats(records: list, pc: int) -> PcStats:
    rows = [r for r in records if r.program_counter == pc]
    if not rows:
        raise PcNotFound(f"PC {to_hex(pc)} has no records in this slice")
    hits = sum(1 for r in rows if not r.is_miss)
    misses = len(rows) - hits
    accessed_fd = [
        r.accessed_address_reuse_distance_numeric
        for r in rows
        if r.accessed_address_reuse_distance_numeric is not None
    ]
    evictions = [r for r in rows if r.evicted_address is not None]
    evicted_fd = [
        r.evicted_address_reuse_distance_numeric
        for r in evictions
        if r.evicted_address_reuse_distance_numeric is not None
    ]
    wrong = sum(
        1
        for r in evictions
        if is_wrong_eviction(r.evicted_address_reuse_distance_numeric, r.accessed_address_reuse_distance_numeric)
    )
    return PcStats(
        pc=pc,
        accesses=len(rows),
        hits=hits,
        misses=misses,
        miss_rate=100.0 * misses / len(rows),
        mean_accessed_reuse_distance=_mean(accessed_fd),
        std_accessed_reuse_distance=_std(accessed_fd),
        mean_evicted_reuse_distance=_mean(evicted_fd),
        eviction_count=len(evictions),
        wrong_evictions=wrong,
        wrong_eviction_pct=100.0 * wrong / len(evictions) if evictions else 0.0,
    )


_COMPARE_METRICS = ("miss_rate", "hit_rate")


def compare_policies(store, workload: str, pc: Optional[int] = None, metric: str = "miss_rate") -> list:
    """Rank the workload's policies by the metric, best first.

    `miss_rate` ranks ascending, `hit_rate` descending; ties break by policy
    name.  A PC absent from some bundle drops that policy from the ranking.
    """
    if metric not in _COMPARE_METRICS:
        raise ValueError(f"metric must be one of {_COMPARE_METRICS}, got {metric!r}")
    bundles = store.bundles_for_workload(workload)
    if not bundles:
        raise WorkloadNotFound(f"no bundles for workload {workload!r}")
    entries = []
    for bundle in bundles:
        rows = bundle.records
        if pc is not None:
            rows = [r for r in rows if r.program_counter == pc]
            if not rows:
                continue
        misses = sum(r.is_miss for r in rows)
        rate = 100.0 * misses / len(rows)
        entries.append((bundle.key.policy, rate if metric == "miss_rate" else 100.0 - rate))
    if not entries:
        raise PcNotFound(f"PC {to_hex(pc)} has no records in any {workload!r} bundle")
    ascending = metric == "miss_rate"
    entries.sort(key=lambda e: (e[1] if ascending else -e[1], e[0]))
    return entries


@dataclass
class SetHotness:
    hot: list
    cold: list
    table: list


def set_hotness(records: list, k: int, min_accesses: int = 16) -> SetHotness:
    """Top/bottom-k sets by hit rate among sets with at least `min_accesses`.

    Ties break by set id ascending; the table lists every eligible set in
    set-id order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: dict = {}
    for r in records:
        accesses, hits = counts.get(r.cache_set_id, (0, 0))
        counts[r.cache_set_id] = (accesses + 1, hits + (0 if r.is_miss else 1))
    table = [
        SetStats(set_id=s, accesses=a, hits=h)
        for s, (a, h) in sorted(counts.items())
        if a >= min_accesses
    ]
    if len(table) < k:
        raise NotEnoughSets(f"only {len(table)} sets have >= {min_accesses} accesses; need {k}")
    hot = sorted(table, key=lambda s: (-s.hit_rate, s.set_id))[:k]
    cold = sorted(table, key=lambda s: (s.hit_rate, s.set_id))[:k]
    return SetHotness(hot=[s.set_id for s in hot], cold=[s.set_id for s in cold], table=table)


@dataclass
class VarianceGroups:
    """PCs bucketed by the spread of their forward reuse distances.

    Tertile boundaries come from the observed std distribution; PCs with
    fewer than 2 reused accesses are reported separately as unclassified.
    """

    low: set
    medium: set
    high: set
    unclassified: set
    boundaries: tuple


def group_pcs_by_reuse_variance(records: list) -> VarianceGroups:
    samples: dict = {}
    for r in records:
        fd = r.accessed_address_reuse_distance_numeric
        samples.setdefault(r.program_counter, [])
        if fd is not None:
            samples[r.program_counter].append(fd)
    stds = {pc: _std(vals) for pc, vals in samples.items()}
    unclassified = {pc for pc, s in stds.items() if s is None}
    classified = {pc: s for pc, s in stds.items() if s is not None}
    if not classified:
        return VarianceGroups(set(), set(), set(), unclassified, (0.0, 0.0))
    values = sorted(classified.values())
    q1, q2 = (float(q) for q in np.percentile(values, [100 / 3, 200 / 3]))
    low = {pc for pc, s in classified.items() if s <= q1}
    medium = {pc for pc, s in classified.items() if q1 < s <= q2}
    high = {pc for pc, s in classified.items() if s > q2}
    return VarianceGroups(low, medium, high, unclassified, (q1, q2))


def bypass_candidates(records: list, max_candidates: int = 10) -> list:
    """PCs ranked most-bypassable first: low hit rate, then long reuse distance.

    Never-reused PCs rank ahead of any finite mean distance.  Each entry is
    (pc, PcStats, reason); the order is a deterministic total order.
    """
    pcs = sorted({r.program_counter for r in records})
    ranked = []
    for pc in pcs:
        st = pc_stats(records, pc)
        mean_fd = st.mean_accessed_reuse_distance
        sort_distance = float("inf") if mean_fd is None else mean_fd
        if mean_fd is None:
            reason = f"hit rate {st.hit_rate:.2f}%, accessed lines never reused"
        else:
            reason = f"hit rate {st.hit_rate:.2f}%, mean reuse distance {mean_fd:.2f} accesses"
        ranked.append(((st.hit_rate, -sort_distance, pc), (pc, st, reason)))
    ranked.sort(key=lambda e: e[0])
    return [entry for _, entry in ranked[:max_candidates]]


def top_miss_pc(records: list):
    """(pc, miss_count, miss_rate) for the PC causing the most misses; ties by lower PC."""
    miss_counts: dict = {}
    totals: dict = {}
    for r in records:
        totals[r.program_counter] = totals.get(r.program_counter, 0) + 1
        if r.is_miss:
            miss_counts[r.program_counter] = miss_counts.get(r.program_counter, 0) + 1
    if not miss_counts:
        raise NoMisses("slice contains no misses")
    pc = min(miss_counts, key=lambda p: (-miss_counts[p], p))
    return pc, miss_counts[pc], 100.0 * miss_counts[pc] / totals[pc]


def count_events(records: list, predicate) -> int:
    """Exact count of records satisfying the predicate."""
    return sum(1 for r in records if predicate(r))
