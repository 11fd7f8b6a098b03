"""Filter-based retriever: turn a natural-language question into symbolic
filters, select the right trace bundle, slice it, and assemble a grounded,
provenance-carrying evidence bundle for the answer generator.

Hex token classification: tokens with <= 8 hex digits are treated as program
counters, tokens with >= 9 digits as data addresses (instruction addresses
are short, line addresses long in every trace this tool produces).

Name matching is pluggable; the default ranker is lexical (exact token match
or best difflib ratio against the query's tokens) so retrieval works without
any embedding backend.  Below the similarity threshold a name stays absent
rather than guessing, which would silently retrieve the wrong bundle.
"""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from cacheqa.errors import CacheQAError
from cacheqa.simulator import POLICY_DESCRIPTIONS
from cacheqa.stats import PcNotFound, PcStats, pc_stats
from cacheqa.trace_model import Outcome, TraceBundle, TraceKey, TraceStore, slice_records, to_hex


class BundleNotFound(CacheQAError):
    pass


class AmbiguousBundle(CacheQAError):
    def __init__(self, message: str, candidates: list):
        self.candidates = candidates
        super().__init__(f"{message}; candidates: {', '.join(candidates)}")


@dataclass
class QueryFilters:
    """Symbolic filters extracted from a question."""

    workload: Optional[str] = None
    policy: Optional[str] = None
    pcs: list = field(default_factory=list)
    addresses: list = field(default_factory=list)
    set_ids: list = field(default_factory=list)
    outcome: Optional[Outcome] = None

    def anchored(self) -> bool:
        return bool(
            self.workload or self.policy or self.pcs or self.addresses or self.set_ids or self.outcome
        )

    def echo(self) -> dict:
        return {
            "workload": self.workload,
            "policy": self.policy,
            "pcs": [to_hex(pc) for pc in self.pcs],
            "addresses": [to_hex(a) for a in self.addresses],
            "set_ids": list(self.set_ids),
            "outcome": self.outcome.value if self.outcome else None,
        }


SIMILARITY_THRESHOLD = 0.6
_HEX_TOKEN_RE = re.compile(r"0x[0-9a-fA-F]+")
_WORD_RE = re.compile(r"[a-z0-9_]+")
_SET_RE = re.compile(r"\bsets?\s+(\d+)")
_PC_ADDRESS_DIGIT_SPLIT = 8  # <= 8 hex digits reads as a PC, more as an address


def lexical_ranker(text: str, candidates: list) -> list:
    """Rank candidate names by best token match against the query.

    Exact token hits score 1.0; otherwise the best difflib ratio over the
    query's tokens.  Returns (name, score) sorted by score desc, name asc.
    """
    tokens = _WORD_RE.findall(text.lower())
    scored = []
    for name in candidates:
        if name in tokens:
            score = 1.0
        else:
            score = max((difflib.SequenceMatcher(None, name, t).ratio() for t in tokens), default=0.0)
        scored.append((name, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def _best_name(text: str, candidates: list, ranker, threshold: float) -> Optional[str]:
    if not candidates:
        return None
    ranked = ranker(text, candidates)
    if not ranked or ranked[0][1] < threshold:
        return None
    if len(ranked) > 1 and ranked[1][1] == ranked[0][1]:
        return None  # exact tie: refuse to guess
    return ranked[0][0]


def parse_query(
    text: str,
    known_workloads: list,
    known_policies: list,
    name_ranker: Callable = lexical_ranker,
    threshold: float = SIMILARITY_THRESHOLD,
) -> QueryFilters:
    """Extract filters from a question; never invents names.

    A fully unanchored question yields empty filters and the caller decides
    the fallback.
    """
    filters = QueryFilters()
    for token in _HEX_TOKEN_RE.findall(text):
        value = int(token, 16)
        digits = len(token) - 2
        target = filters.pcs if digits <= _PC_ADDRESS_DIGIT_SPLIT else filters.addresses
        if value not in target:
            target.append(value)
    for match in _SET_RE.finditer(text.lower()):
        set_id = int(match.group(1))
        if set_id not in filters.set_ids:
            filters.set_ids.append(set_id)
    filters.workload = _best_name(text, list(known_workloads), name_ranker, threshold)
    filters.policy = _best_name(text, list(known_policies), name_ranker, threshold)
    # "miss rate" is a statistic, not an outcome constraint
    words = set(_WORD_RE.findall(re.sub(r"miss\s+rates?", " ", text.lower())))
    mentions_hit = bool(words & {"hit", "hits"})
    mentions_miss = bool(words & {"miss", "misses", "missed"})
    if mentions_hit and not mentions_miss:
        filters.outcome = Outcome.HIT
    elif mentions_miss and not mentions_hit:
        filters.outcome = Outcome.MISS
    return filters


@dataclass
class PcContext:
    pc: int
    function_name: str
    assembly_code: str
    stats: PcStats


@dataclass
class ContextBundle:
    """Evidence slice handed to the generator, with provenance attached."""

    key: TraceKey
    trace_excerpt: list
    pc_context: dict
    policy_description: str
    workload_description: str
    metadata_summary: str
    sibling_outcomes: list
    filters: QueryFilters
    truncated: bool

    @property
    def provenance(self) -> dict:
        return {
            "key": self.key.canonical_id,
            "filters": self.filters.echo(),
            "excerpt_records": len(self.trace_excerpt),
            "truncated": self.truncated,
        }


DEFAULT_EXCERPT_CAP = 32


def _select_bundle(store: TraceStore, filters: QueryFilters) -> TraceBundle:
    if filters.workload and filters.policy:
        bundle = store.get(filters.workload, filters.policy)
        if bundle is None:
            raise BundleNotFound(f"no trace for workload={filters.workload!r} policy={filters.policy!r}")
        return bundle
    candidates = [
        b
        for b in store.bundles()
        if (filters.workload is None or b.key.workload == filters.workload)
        and (filters.policy is None or b.key.policy == filters.policy)
    ]
    if not candidates:
        raise BundleNotFound("no trace bundle matches the query")
    if len(candidates) > 1:
        raise AmbiguousBundle(
            "query does not pin down a single trace", [b.key.canonical_id for b in candidates]
        )
    return candidates[0]


def retrieve(store: TraceStore, filters: QueryFilters, excerpt_cap: int = DEFAULT_EXCERPT_CAP) -> ContextBundle:
    """Select a bundle by the filters and assemble the evidence slice.

    Per-PC statistics are computed over the whole bundle for every filtered
    PC present in it, so an address mismatch still yields PC context even
    when the excerpt comes back empty.
    """
    bundle = _select_bundle(store, filters)
    matching = slice_records(bundle.records, filters)
    excerpt = matching[:excerpt_cap]
    pc_context = {}
    for pc in filters.pcs:
        try:
            st = pc_stats(bundle.records, pc)
        except PcNotFound:
            continue
        sample = next(r for r in bundle.records if r.program_counter == pc)
        pc_context[pc] = PcContext(
            pc=pc,
            function_name=sample.function_name,
            assembly_code=sample.assembly_code,
            stats=st,
        )
    policy_description = POLICY_DESCRIPTIONS.get(bundle.key.policy, "")
    # bundle descriptions carry both halves; keep only the workload part here
    workload_description = bundle.description
    if "Workload:" in workload_description:
        workload_description = workload_description.split("Workload:", 1)[1].strip()
    sibling_outcomes = _sibling_outcomes(store, bundle, filters)
    return ContextBundle(
        key=bundle.key,
        trace_excerpt=excerpt,
        pc_context=pc_context,
        policy_description=policy_description,
        workload_description=workload_description,
        metadata_summary=bundle.metadata,
        sibling_outcomes=sibling_outcomes,
        filters=filters,
        truncated=len(matching) > excerpt_cap,
    )


def _sibling_outcomes(store: TraceStore, bundle: TraceBundle, filters: QueryFilters) -> list:
    """One-line cross-policy context for each filtered PC under the same workload."""
    lines = []
    for sibling in store.bundles_for_workload(bundle.key.workload):
        if sibling.key == bundle.key:
            continue
        for pc in filters.pcs:
            rows = [r for r in sibling.records if r.program_counter == pc]
            if not rows:
                continue
            if filters.addresses:
                pair_rows = [r for r in rows if r.memory_address in set(filters.addresses)]
                if pair_rows:
                    lines.append(
                        f"{sibling.key.policy} + {sibling.key.workload} @ PC {to_hex(pc)}, "
                        f"addr {to_hex(pair_rows[0].memory_address)}: {pair_rows[0].evict.value}"
                    )
                    continue
            misses = sum(r.is_miss for r in rows)
            lines.append(
                f"{sibling.key.policy} + {sibling.key.workload} @ PC {to_hex(pc)}: "
                f"miss rate {100.0 * misses / len(rows):.2f}%"
            )
    return lines


NOT_FOUND_SENTINEL = "Exact PC, Memory Address match not found"


def render_record(record, key: TraceKey) -> str:
    """Deterministic text block for one excerpt record."""
    lines = [
        f"For policy {key.policy} on workload {key.workload} at PC "
        f"{to_hex(record.program_counter)} and address {to_hex(record.memory_address)}:",
        f"Cache result: {record.evict.value}",
    ]
    if record.evicted_address is not None:
        inserted = (
            f"Inserted address {record.accessed_address_reuse_distance}"
            if record.accessed_address_reuse_distance_numeric is not None
            else "Inserted address never needed again"
        )
        lines.append(
            f"Evicted address: {to_hex(record.evicted_address)} "
            f"({record.evicted_address_reuse_distance}), {inserted}."
        )
    lines.append(
        f"Set {record.cache_set_id}; recency: {record.accessed_address_recency}; "
        f"reuse: {record.accessed_address_reuse_distance}; miss type: {record.miss_type.value}"
    )
    if record.current_cache_lines:
        pairs = ", ".join(f"({to_hex(pc)}, {to_hex(addr)})" for pc, addr in record.current_cache_lines)
        lines.append(f"Cache lines: {pairs}")
    if record.cache_line_eviction_scores:
        scores = ", ".join(f"{to_hex(addr)}={score}" for addr, score in record.cache_line_eviction_scores)
        lines.append(f"Cache line scores: {scores}")
    if record.recent_access_history:
        history = ", ".join(f"({to_hex(pc)}, {to_hex(addr)})" for pc, addr in record.recent_access_history)
        lines.append(f"Access history: {history}")
    return "\n".join(lines)


def render_pc_stats(context: PcContext) -> str:
    pc = to_hex(context.pc)
    st = context.stats
    lines = [
        f"PC {pc} appears {st.accesses} times in this trace ({st.hits} hits, {st.misses} misses).",
        f"The miss rate for PC {pc} is {st.miss_rate:.2f}%.",
    ]
    if st.mean_accessed_reuse_distance is not None:
        lines.append(
            f"The mean accessed reuse distance for PC {pc} is "
            f"{st.mean_accessed_reuse_distance:.2f} accesses."
        )
    else:
        lines.append(f"Accessed lines of PC {pc} are never reused.")
    if st.mean_evicted_reuse_distance is not None:
        lines.append(
            f"The mean evicted reuse distance for PC {pc} is "
            f"{st.mean_evicted_reuse_distance:.2f} accesses."
        )
    if st.eviction_count:
        lines.append(
            f"Wrong evictions triggered by PC {pc}: {st.wrong_evictions} of "
            f"{st.eviction_count} ({st.wrong_eviction_pct:.2f}%)."
        )
    if context.function_name:
        lines.append(f"Source Function: {context.function_name}")
    if context.assembly_code:
        lines.append(f"Assembly for PC {pc}:")
        lines.append(context.assembly_code)
    return "\n".join(lines)


def render_context(bundle: ContextBundle) -> str:
    """Byte-stable rendering of the whole evidence bundle."""
    parts = [
        f"Trace: {bundle.key.canonical_id}",
        f"Replacement Policy: {bundle.policy_description}",
        f"Workload: {bundle.workload_description}",
    ]
    parts.append(f"--- Trace excerpt ({len(bundle.trace_excerpt)} records"
                 f"{', truncated' if bundle.truncated else ''}) ---")
    if bundle.trace_excerpt:
        parts.extend(render_record(r, bundle.key) for r in bundle.trace_excerpt)
    else:
        parts.append(NOT_FOUND_SENTINEL)
    if bundle.pc_context:
        parts.append("--- PC statistics ---")
        for pc in sorted(bundle.pc_context):
            parts.append(render_pc_stats(bundle.pc_context[pc]))
    if bundle.sibling_outcomes:
        parts.append("--- Cross-policy context ---")
        parts.extend(bundle.sibling_outcomes)
    parts.append("--- Trace metadata ---")
    parts.append(bundle.metadata_summary)
    return "\n".join(parts)
