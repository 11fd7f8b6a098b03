"""Trace-driven set-associative cache simulator with offline-optimal support.

Replays an ordered (pc, address) access list through one cache level and
emits one fully annotated AccessRecord per access: hit/miss outcome, miss
taxonomy, victim identity, forward reuse and backward recency distances,
pre-access set/history/score snapshots, plus a one-line performance summary
rendered from the trace counters.

Supported replacement policies: LRU, offline-optimal (evicts the resident
line whose next use lies farthest in the future), seeded random, LRU with a
PC-based bypass list, and a seeded stub that tags lines with stable random
scores so the score column is exercised.  Learned policies are out of scope.

Distance conventions (all in units of accesses):
  * forward reuse distance at index i = j - i where j is the next access to
    the same address ("needed again in N accesses" is literal); absent when
    the address is never touched again;
  * recency at index i = number of intervening accesses since the previous
    touch of the same address (i - prev - 1); absent on first touch.

Addresses are treated at line granularity: two accesses hit the same cache
line iff address >> log2(line_size) agrees.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cacheqa.errors import CacheQAError
from cacheqa.trace_model import (
    AccessRecord,
    MissType,
    Outcome,
    TraceBundle,
    TraceKey,
)


class ConfigError(CacheQAError):
    """Invalid cache geometry or policy parameters."""


class EmptyTrace(CacheQAError):
    """Summary requested over zero records."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class CacheConfig:
    """Geometry of the simulated cache level."""

    num_sets: int = 2048
    ways: int = 16
    line_size_bytes: int = 64
    history_depth: int = 8

    def validate(self) -> None:
        if not _is_pow2(self.num_sets):
            raise ConfigError(f"num_sets must be a power of two >= 1, got {self.num_sets}")
        if self.ways < 1:
            raise ConfigError(f"ways must be >= 1, got {self.ways}")
        if not _is_pow2(self.line_size_bytes):
            raise ConfigError(f"line_size_bytes must be a power of two >= 1, got {self.line_size_bytes}")
        if self.history_depth < 0:
            raise ConfigError(f"history_depth must be >= 0, got {self.history_depth}")

    @property
    def line_bits(self) -> int:
        return self.line_size_bytes.bit_length() - 1

    @property
    def capacity_lines(self) -> int:
        return self.num_sets * self.ways


POLICY_KINDS = ("lru", "belady", "random", "bypass_lru", "scored_stub")

POLICY_DESCRIPTIONS = {
    "lru": "LRU evicts the line that has gone unused for the longest time.",
    "belady": (
        "Offline-optimal replacement: evicts the resident line whose next "
        "use lies farthest in the future; an upper bound on hit rate."
    ),
    "random": "Evicts a uniformly random resident line (seeded, replayable).",
    "bypass_lru": (
        "LRU with a PC bypass list: misses issued by listed PCs skip cache "
        "insertion entirely, avoiding pollution."
    ),
    "scored_stub": (
        "Stand-in scored policy: each line carries a stable seeded random "
        "score and the lowest score is evicted."
    ),
}


@dataclass(frozen=True)
class PolicySpec:
    """Replacement policy selector plus per-kind parameters."""

    kind: str
    seed: int = 0
    bypass_pcs: frozenset = frozenset()

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind == "bypass_lru" and not self.bypass_pcs:
            raise ConfigError("bypass_lru requires a non-empty bypass PC set")

    @classmethod
    def lru(cls) -> "PolicySpec":
        return cls("lru")

    @classmethod
    def belady(cls) -> "PolicySpec":
        return cls("belady")

    @classmethod
    def rand(cls, seed: int) -> "PolicySpec":
        return cls("random", seed=seed)

    @classmethod
    def bypass_lru(cls, bypass_pcs) -> "PolicySpec":
        return cls("bypass_lru", bypass_pcs=frozenset(bypass_pcs))

    @classmethod
    def scored_stub(cls, seed: int = 0) -> "PolicySpec":
        return cls("scored_stub", seed=seed)

    def describe(self) -> str:
        return POLICY_DESCRIPTIONS[self.kind]


def set_index(address: int, config: CacheConfig) -> int:
    """Set id = bits [log2(line_size), log2(line_size)+log2(num_sets)) of the address."""
    return (address >> config.line_bits) & (config.num_sets - 1)


def next_occurrence_table(addresses: list) -> list:
    """For each index, the absolute index of the next access to the same address (None if never)."""
    last_seen: dict = {}
    out = [None] * len(addresses)
    for i in range(len(addresses) - 1, -1, -1):
        out[i] = last_seen.get(addresses[i])
        last_seen[addresses[i]] = i
    return out


def next_use_table(addresses: list) -> list:
    """Forward reuse distances: entry i = j - i for the smallest j > i with the same address."""
    return [None if j is None else j - i for i, j in enumerate(next_occurrence_table(addresses))]


def recency_table(addresses: list) -> list:
    """Backward recencies: entry i = count of accesses strictly between i and the previous touch."""
    prev_seen: dict = {}
    out = [None] * len(addresses)
    for i, addr in enumerate(addresses):
        if addr in prev_seen:
            out[i] = i - prev_seen[addr] - 1
        prev_seen[addr] = i
    return out


def is_wrong_eviction(evicted_fd: Optional[int], inserted_fd: Optional[int]) -> bool:
    """True iff the victim would have been reused sooner than the inserted line.

    A victim that is never reused loses nothing; an inserted line that is
    never reused makes any reused victim a wrong choice.
    """
    if evicted_fd is None:
        return False
    return inserted_fd is None or evicted_fd < inserted_fd


@dataclass
class TraceSummary:
    """Whole-trace counters mirrored by the rendered metadata string."""

    total_accesses: int
    total_misses: int
    miss_rate: float
    pct_compulsory: float
    pct_capacity: float
    pct_conflict: float
    total_evictions: int
    wrong_evictions: int
    wrong_eviction_pct: float
    recency_miss_correlation: float

    def render(self, fold_compulsory: bool = False) -> str:
        """Render the one-line metadata summary (two-decimal percentages).

        `fold_compulsory` folds the compulsory bucket into capacity and
        drops its clause, reproducing summaries that report two buckets.
        """
        if fold_compulsory:
            buckets = (
                f"{self.pct_capacity + self.pct_compulsory:.2f}% capacity misses, "
                f"{self.pct_conflict:.2f}% conflict misses"
            )
        else:
            buckets = (
                f"{self.pct_compulsory:.2f}% compulsory misses, "
                f"{self.pct_capacity:.2f}% capacity misses, "
                f"{self.pct_conflict:.2f}% conflict misses"
            )
        return (
            f"Cache Performance Summary: {self.total_accesses} total accesses, "
            f"{self.total_misses} total misses, {self.miss_rate:.2f}% miss rate, "
            f"{buckets}, {self.total_evictions} total evictions, "
            f"{self.wrong_evictions} ({self.wrong_eviction_pct:.2f}%) wrong evictions "
            f"where evicted line has lower reuse distance. "
            f"The correlation between accessed address recency and cache misses is "
            f"{self.recency_miss_correlation:.2f}."
        )


_METADATA_RE = re.compile(
    r"Cache Performance Summary: (?P<accesses>\d+) total accesses, "
    r"(?P<misses>\d+) total misses, (?P<miss_rate>[\d.]+)% miss rate, "
    r"(?:(?P<compulsory>[\d.]+)% compulsory misses, )?"
    r"(?P<capacity>[\d.]+)% capacity misses, (?P<conflict>[\d.]+)% conflict misses, "
    r"(?P<evictions>\d+) total evictions, "
    r"(?P<wrong>\d+) \((?P<wrong_pct>[\d.]+)%\) wrong evictions "
    r"where evicted line has lower reuse distance\. "
    r"The correlation between accessed address recency and cache misses is "
    r"(?P<corr>-?[\d.]+)\."
)


def parse_metadata(text: str) -> TraceSummary:
    """Parse a rendered metadata string back into its counters."""
    m = _METADATA_RE.search(text)
    if not m:
        raise ValueError(f"unrecognized metadata string: {text!r}")
    return TraceSummary(
        total_accesses=int(m["accesses"]),
        total_misses=int(m["misses"]),
        miss_rate=float(m["miss_rate"]),
        pct_compulsory=float(m["compulsory"]) if m["compulsory"] else 0.0,
        pct_capacity=float(m["capacity"]),
        pct_conflict=float(m["conflict"]),
        total_evictions=int(m["evictions"]),
        wrong_evictions=int(m["wrong"]),
        wrong_eviction_pct=float(m["wrong_pct"]),
        recency_miss_correlation=float(m["corr"]),
    )


def _pearson(xs: list, ys: list) -> float:
    if len(xs) < 2:
        return 0.0
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if float(x.std()) == 0.0 or float(y.std()) == 0.0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


def summarize(records: list, fold_compulsory: bool = False):
    """Compute TraceSummary counters by full scan and render the metadata string.

    The recency/miss Pearson correlation excludes first-touch records (no
    finite recency exists for them); zero-variance inputs yield 0.0.
    """
    if not records:
        raise EmptyTrace("cannot summarize an empty record table")
    accesses = len(records)
    misses = sum(r.is_miss for r in records)
    evictions = sum(1 for r in records if r.evicted_address is not None)
    wrong = sum(
        1
        for r in records
        if r.evicted_address is not None
        and is_wrong_eviction(r.evicted_address_reuse_distance_numeric, r.accessed_address_reuse_distance_numeric)
    )
    by_type = {t: 0 for t in MissType}
    for r in records:
        by_type[r.miss_type] += 1

    def pct(part: int, whole: int) -> float:
        return 100.0 * part / whole if whole else 0.0

    pairs = [
        (r.accessed_address_recency_numeric, r.is_miss)
        for r in records
        if r.accessed_address_recency_numeric is not None
    ]
    summary = TraceSummary(
        total_accesses=accesses,
        total_misses=misses,
        miss_rate=pct(misses, accesses),
        pct_compulsory=pct(by_type[MissType.COMPULSORY], misses),
        pct_capacity=pct(by_type[MissType.CAPACITY], misses),
        pct_conflict=pct(by_type[MissType.CONFLICT], misses),
        total_evictions=evictions,
        wrong_evictions=wrong,
        wrong_eviction_pct=pct(wrong, evictions),
        recency_miss_correlation=_pearson([p[0] for p in pairs], [p[1] for p in pairs]),
    )
    return summary, summary.render(fold_compulsory=fold_compulsory)


class _Line:
    __slots__ = ("address", "pc", "last_touch", "next_use", "stub_score")

    def __init__(self, address: int, pc: int, now: int, next_use: Optional[int], stub_score: int):
        self.address = address
        self.pc = pc
        self.last_touch = now
        self.next_use = next_use  # absolute index of the line's next useable access
        self.stub_score = stub_score


class _ShadowLru:
    """Fully-associative LRU of equal total capacity for miss classification."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._order: dict = {}  # insertion-ordered dict as recency queue

    def access(self, line_id: int) -> bool:
        hit = line_id in self._order
        if hit:
            del self._order[line_id]
        elif len(self._order) >= self.capacity:
            oldest = next(iter(self._order))
            del self._order[oldest]
        self._order[line_id] = None
        return hit


def simulate(
    trace: list,
    config: CacheConfig,
    policy: PolicySpec,
    *,
    workload: str = "trace",
    workload_description: Optional[str] = None,
    fold_compulsory: bool = False,
) -> TraceBundle:
    """Replay `trace` (ordered (pc, address) pairs) and build an annotated bundle.

    The offline-optimal policy needs the whole trace up front; everything is
    deterministic given (trace, config, policy including seeds).
    """
    config.validate()
    addresses = [addr for _, addr in trace]
    next_occ = next_occurrence_table(addresses)
    fwd = next_use_table(addresses)
    rec = recency_table(addresses)
    horizon = len(trace)  # score stand-in for "never used again"

    rng_victim = random.Random(policy.seed)
    rng_scores = random.Random(policy.seed ^ 0x9E3779B97F4A7C15)
    rng_stub = random.Random(policy.seed ^ 0x5DEECE66D)

    sets: list = [[] for _ in range(config.num_sets)]
    shadow = _ShadowLru(config.capacity_lines)
    seen: set = set()
    history: list = []
    records: list = []

    def line_scores(lines: list) -> list:
        if policy.kind == "belady":
            return [(l.address, l.next_use if l.next_use is not None else horizon) for l in lines]
        if policy.kind in ("lru", "bypass_lru"):
            return [(l.address, l.last_touch) for l in lines]
        if policy.kind == "random":
            return [(l.address, rng_scores.randrange(1 << 32)) for l in lines]
        return [(l.address, l.stub_score) for l in lines]

    def choose_victim(lines: list) -> int:
        if policy.kind in ("lru", "bypass_lru"):
            return min(range(len(lines)), key=lambda w: lines[w].last_touch)
        if policy.kind == "belady":
            # farthest next use wins; never-reused counts as infinity; ties
            # broken by lowest way index (min is stable on first max).
            best_way, best_key = 0, -1.0
            for w, line in enumerate(lines):
                key = math.inf if line.next_use is None else float(line.next_use)
                if key > best_key:
                    best_way, best_key = w, key
            return best_way
        if policy.kind == "random":
            return rng_victim.randrange(len(lines))
        return min(range(len(lines)), key=lambda w: (lines[w].stub_score, w))

    for i, (pc, address) in enumerate(trace):
        line_id = address >> config.line_bits
        set_id = set_index(address, config)
        lines = sets[set_id]

        snapshot_lines = [(l.pc, l.address) for l in lines]
        snapshot_addresses = [l.address for l in lines]
        snapshot_scores = line_scores(lines)
        snapshot_history = list(history[-config.history_depth:]) if config.history_depth else []

        first_touch = line_id not in seen
        seen.add(line_id)
        shadow_hit = shadow.access(line_id)

        way = next((w for w, l in enumerate(lines) if l.address >> config.line_bits == line_id), None)
        evicted_address = None
        evicted_fd = None
        if way is not None:
            outcome = Outcome.HIT
            miss_type = MissType.NONE
            line = lines[way]
            line.address = address
            line.pc = pc
            line.last_touch = i
            line.next_use = next_occ[i]
        else:
            outcome = Outcome.MISS
            if first_touch:
                miss_type = MissType.COMPULSORY
            elif not shadow_hit:
                miss_type = MissType.CAPACITY
            else:
                miss_type = MissType.CONFLICT
            bypassed = policy.kind == "bypass_lru" and pc in policy.bypass_pcs
            if not bypassed:
                new_line = _Line(address, pc, i, next_occ[i], rng_stub.randrange(1 << 32))
                if len(lines) < config.ways:
                    lines.append(new_line)
                else:
                    victim_way = choose_victim(lines)
                    victim = lines[victim_way]
                    evicted_address = victim.address
                    # the victim's stored next use is still its first use
                    # after now: any earlier touch would have been a hit.
                    evicted_fd = None if victim.next_use is None else victim.next_use - i
                    lines[victim_way] = new_line

        records.append(
            AccessRecord(
                program_counter=pc,
                memory_address=address,
                cache_set_id=set_id,
                evict=outcome,
                miss_type=miss_type,
                evicted_address=evicted_address,
                accessed_address_recency_numeric=rec[i],
                accessed_address_reuse_distance_numeric=fwd[i],
                evicted_address_reuse_distance_numeric=evicted_fd,
                current_cache_lines=snapshot_lines,
                recent_access_history=snapshot_history,
                cache_line_eviction_scores=snapshot_scores,
                current_cache_line_addresses=snapshot_addresses,
            )
        )
        history.append((pc, address))

    _, metadata = summarize(records, fold_compulsory=fold_compulsory) if records else (None, "")
    key = TraceKey(workload, policy.kind)
    description = (
        f"Replacement Policy: {policy.describe()} "
        f"Workload: {workload_description or f'{workload} access trace ({len(trace)} LLC accesses).'}"
    )
    return TraceBundle(key=key, records=records, metadata=metadata, description=description)
