import random

import pytest

from cacheqa.sieve import (
    NOT_FOUND_SENTINEL,
    AmbiguousBundle,
    BundleNotFound,
    QueryFilters,
    lexical_ranker,
    parse_query,
    render_context,
    retrieve,
)
from cacheqa.trace_model import Outcome, to_hex

WORKLOADS = ["astar", "lbm", "mcf"]
POLICIES = ["belady", "lru", "mlp", "parrot"]


class TestParseQuery:
    def test_templated_miss_rate_query(self):
        filters = parse_query(
            "What is the miss rate for PC 0x4037ba on the mcf workload with PARROT replacement policy?",
            WORKLOADS,
            POLICIES,
        )
        assert filters.workload == "mcf"
        assert filters.policy == "parrot"
        assert filters.pcs == [0x4037BA]
        assert filters.addresses == []
        assert filters.outcome is None

    def test_unanchored_query(self):
        filters = parse_query("hello", WORKLOADS, POLICIES)
        assert not filters.anchored()

    def test_pc_and_address_classification(self):
        filters = parse_query(
            "Does the memory access with PC 0x401e31 and address 0x35e798a637f result in a "
            "cache hit or miss for the lbm workload under PARROT?",
            WORKLOADS,
            POLICIES,
        )
        assert filters.pcs == [0x401E31]
        assert filters.addresses == [0x35E798A637F]
        assert filters.workload == "lbm"
        assert filters.policy == "parrot"
        assert filters.outcome is None  # both hit and miss mentioned

    def test_outcome_intent(self):
        filters = parse_query("show me the misses for lbm under lru", WORKLOADS, POLICIES)
        assert filters.outcome is Outcome.MISS
        filters = parse_query("list cache hits in mcf with lru", WORKLOADS, POLICIES)
        assert filters.outcome is Outcome.HIT

    def test_never_invents_names(self):
        filters = parse_query("miss rate for the gromacs workload under drrip", WORKLOADS, POLICIES)
        assert filters.workload in (None, *WORKLOADS)
        assert filters.policy in (None, *POLICIES)

    def test_exact_tie_refuses_to_guess(self):
        filters = parse_query("compare lbm and mcf behavior", WORKLOADS, POLICIES)
        assert filters.workload is None

    def test_set_mention(self):
        filters = parse_query("what happens in set 1424 of astar under lru", WORKLOADS, POLICIES)
        assert filters.set_ids == [1424]

    def test_ranker_is_pluggable(self):
        calls = []

        def ranker(text, candidates):
            calls.append(candidates)
            return [(candidates[0], 1.0)] + [(c, 0.0) for c in candidates[1:]]

        filters = parse_query("whatever", WORKLOADS, POLICIES, name_ranker=ranker)
        assert filters.workload == "astar"
        assert filters.policy == "belady"
        assert len(calls) == 2

    def test_lexical_ranker_orders_exact_match_first(self):
        ranked = lexical_ranker("miss rate in lbm", ["astar", "lbm", "mcf"])
        assert ranked[0] == ("lbm", 1.0)


class TestRetrieve:
    def test_exact_tuple_yields_compact_slice(self, fixture_store):
        bundle = fixture_store["blend_evictions_lru"]
        record = bundle.records[40]
        filters = QueryFilters(
            workload="blend",
            policy="lru",
            pcs=[record.program_counter],
            addresses=[record.memory_address],
        )
        ctx = retrieve(fixture_store, filters)
        assert ctx.key.canonical_id == "blend_evictions_lru"
        assert ctx.trace_excerpt
        assert all(
            r.program_counter == record.program_counter and r.memory_address == record.memory_address
            for r in ctx.trace_excerpt
        )

    def test_unknown_policy(self, fixture_store):
        with pytest.raises(BundleNotFound):
            retrieve(fixture_store, QueryFilters(workload="blend", policy="foo"))

    def test_ambiguous_without_policy(self, fixture_store):
        with pytest.raises(AmbiguousBundle) as err:
            retrieve(fixture_store, QueryFilters(workload="blend"))
        assert "blend_evictions_lru" in err.value.candidates

    def test_pc_present_address_absent(self, fixture_store):
        bundle = fixture_store["blend_evictions_lru"]
        pc = bundle.records[0].program_counter
        filters = QueryFilters(workload="blend", policy="lru", pcs=[pc], addresses=[0xDEAD00000000])
        ctx = retrieve(fixture_store, filters)
        assert ctx.trace_excerpt == []
        assert pc in ctx.pc_context
        assert ctx.metadata_summary == bundle.metadata

    def test_excerpt_cap_and_truncation_flag(self, fixture_store):
        filters = QueryFilters(workload="blend", policy="lru")
        ctx = retrieve(fixture_store, filters, excerpt_cap=5)
        assert len(ctx.trace_excerpt) == 5
        assert ctx.truncated
        assert ctx.provenance["truncated"] is True

    def test_sibling_policies_in_context(self, fixture_store):
        bundle = fixture_store["blend_evictions_lru"]
        pc = bundle.records[0].program_counter
        ctx = retrieve(fixture_store, QueryFilters(workload="blend", policy="lru", pcs=[pc]))
        assert any("belady + blend" in line for line in ctx.sibling_outcomes)

    def test_anchored_recall_on_sampled_tuples(self, fixture_store):
        rng = random.Random(17)
        for key in fixture_store.keys():
            bundle = fixture_store[key]
            for record in rng.sample(bundle.records, 3):
                text = (
                    f"Does the memory access with PC {to_hex(record.program_counter)} and address "
                    f"{to_hex(record.memory_address)} result in a cache hit or cache miss for the "
                    f"{bundle.key.workload} workload and {bundle.key.policy} replacement policy?"
                )
                filters = parse_query(text, fixture_store.workloads(), fixture_store.policies())
                ctx = retrieve(fixture_store, filters)
                assert any(
                    r.program_counter == record.program_counter
                    and r.memory_address == record.memory_address
                    for r in ctx.trace_excerpt
                )


class TestRenderContext:
    def test_miss_record_renders_verdict_and_eviction_pair(self, fixture_store):
        bundle = fixture_store["blend_evictions_lru"]
        record = next(r for r in bundle.records if r.evicted_address is not None)
        filters = QueryFilters(
            workload="blend", policy="lru",
            pcs=[record.program_counter], addresses=[record.memory_address],
        )
        text = render_context(retrieve(fixture_store, filters))
        assert "Cache result: Cache Miss" in text
        assert "Evicted address: " in text
        assert "needed again in" in text

    def test_empty_excerpt_renders_sentinel(self, fixture_store):
        filters = QueryFilters(workload="blend", policy="lru", pcs=[0xDEAD00], addresses=[0xDEAD00000000])
        text = render_context(retrieve(fixture_store, filters))
        assert NOT_FOUND_SENTINEL in text

    def test_rendering_is_deterministic(self, fixture_store):
        filters = QueryFilters(workload="chaser", policy="belady", pcs=[0x402150])
        once = render_context(retrieve(fixture_store, filters))
        twice = render_context(retrieve(fixture_store, filters))
        assert once == twice

    def test_stats_sentences_present(self, fixture_store):
        pc = 0x403110
        filters = QueryFilters(workload="blend", policy="lru", pcs=[pc])
        text = render_context(retrieve(fixture_store, filters))
        assert f"The miss rate for PC {to_hex(pc)} is " in text
        assert f"PC {to_hex(pc)} appears " in text
        assert "Source Function: tile_accumulate" in text
        assert "--- Trace metadata ---" in text
