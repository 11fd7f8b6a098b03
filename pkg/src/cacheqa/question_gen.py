"""Generate benchmark questions with verified expected answers directly from
a trace store: the store itself is the ground truth, so every expected value
is computed (never authored) and the suite stays verifiable end to end.

Default shape mirrors the two-tier layout: 30 hit/miss, 10 miss-rate,
15 policy-comparison, 5 count, 10 arithmetic and 5 trick questions in the
trace-grounded tier, plus five reasoning categories of five.
"""

from __future__ import annotations

import random
from typing import Optional

from cacheqa.bench import BenchQuestion, Expected
from cacheqa.ranger.dsl import parse_program
from cacheqa.stats import NoMisses, compare_policies, pc_stats, top_miss_pc
from cacheqa.trace_model import TraceStore, to_hex

DEFAULT_TG_COUNTS = {
    "HitMiss": 30,
    "MissRate": 10,
    "PolicyComparison": 15,
    "Count": 5,
    "Arithmetic": 10,
    "Trick": 5,
}
ARA_PER_CATEGORY = 5

RATE_TOLERANCE = 0.05  # percentage points; counts stay exact

_CRITERIA = ("correctness", "use of evidence", "clarity")


class SuiteGenerationError(Exception):
    pass


def _uniform_pairs(bundle) -> list:
    """(pc, address) pairs whose outcome is identical on every occurrence."""
    by_pair: dict = {}
    for record in bundle.records:
        by_pair.setdefault((record.program_counter, record.memory_address), set()).add(record.evict)
    return sorted(pair for pair, outcomes in by_pair.items() if len(outcomes) == 1)


def _grounding(bundle, pcs=(), addresses=()) -> dict:
    return {
        "key": bundle.key.canonical_id,
        "filters": {
            "pcs": [to_hex(pc) for pc in pcs],
            "addresses": [to_hex(a) for a in addresses],
        },
    }


def _pc_pool(bundle, min_accesses: int = 1) -> list:
    counts: dict = {}
    for record in bundle.records:
        counts[record.program_counter] = counts.get(record.program_counter, 0) + 1
    return sorted(pc for pc, n in counts.items() if n >= min_accesses)


def _round_robin(rng: random.Random, bundles: list, want: int, candidates_for) -> list:
    """Draw `want` distinct (bundle, candidate) picks, cycling the bundles."""
    pools = []
    for bundle in bundles:
        candidates = list(candidates_for(bundle))
        rng.shuffle(candidates)
        if candidates:
            pools.append((bundle, candidates))
    picks = []
    i = 0
    while len(picks) < want and any(candidates for _, candidates in pools):
        bundle, candidates = pools[i % len(pools)]
        if candidates:
            picks.append((bundle, candidates.pop()))
        i += 1
    if len(picks) < want:
        raise SuiteGenerationError(f"store too small: needed {want} picks, found {len(picks)}")
    return picks


def _hitmiss_questions(rng, store, count):
    picks = _round_robin(rng, store.bundles(), count, _uniform_pairs)
    questions = []
    for i, (bundle, (pc, address)) in enumerate(picks):
        record = next(
            r for r in bundle.records if r.program_counter == pc and r.memory_address == address
        )
        questions.append(
            BenchQuestion(
                id=f"tg-hitmiss-{i:03d}",
                tier="TG",
                category="HitMiss",
                text=(
                    f"Does the memory access with PC {to_hex(pc)} and address {to_hex(address)} "
                    f"result in a cache hit or cache miss for the {bundle.key.workload} workload "
                    f"and {bundle.key.policy} replacement policy?"
                ),
                expected=Expected(
                    kind="label", value=record.evict.value, labels=("Cache Hit", "Cache Miss")
                ),
                grounding=_grounding(bundle, pcs=[pc], addresses=[address]),
            )
        )
    return questions


def _missrate_questions(rng, store, count):
    picks = _round_robin(rng, store.bundles(), count, lambda b: _pc_pool(b, min_accesses=4))
    questions = []
    for i, (bundle, pc) in enumerate(picks):
        stats = pc_stats(bundle.records, pc)
        questions.append(
            BenchQuestion(
                id=f"tg-missrate-{i:03d}",
                tier="TG",
                category="MissRate",
                text=(
                    f"What is the miss rate for PC {to_hex(pc)} in {bundle.key.workload} "
                    f"with {bundle.key.policy}?"
                ),
                expected=Expected(
                    kind="numeric", value=round(stats.miss_rate, 2), tolerance=RATE_TOLERANCE
                ),
                grounding=_grounding(bundle, pcs=[pc]),
            )
        )
    return questions


def _comparison_questions(rng, store, count):
    # pool: per-PC and whole-workload rankings, asked in both directions,
    # kept only when the winner/loser is unique
    candidates = []
    for workload in store.workloads():
        bundles = store.bundles_for_workload(workload)
        shared = sorted(set.intersection(*(set(_pc_pool(b, min_accesses=2)) for b in bundles)))
        for pc in [None] + shared:
            ranking = compare_policies(store, workload, pc=pc)
            if len(ranking) < 2:
                continue
            if ranking[0][1] < ranking[1][1]:
                candidates.append((workload, pc, "lowest", ranking[0][0], ranking))
            if ranking[-2][1] < ranking[-1][1]:
                candidates.append((workload, pc, "highest", ranking[-1][0], ranking))
    rng.shuffle(candidates)
    if len(candidates) < count:
        raise SuiteGenerationError(
            f"only {len(candidates)} unambiguous policy comparisons available, need {count}"
        )
    questions = []
    for i, (workload, pc, direction, winner, ranking) in enumerate(candidates[:count]):
        labels = tuple(sorted(policy for policy, _ in ranking))
        target = f"PC {to_hex(pc)} in {workload}" if pc is not None else f"the {workload} workload"
        filters = {"pcs": [to_hex(pc)]} if pc is not None else {}
        questions.append(
            BenchQuestion(
                id=f"tg-policycomparison-{i:03d}",
                tier="TG",
                category="PolicyComparison",
                text=f"Which policy has the {direction} miss rate for {target}?",
                expected=Expected(kind="label", value=winner, labels=labels),
                grounding={"key": f"{workload}_evictions_*", "filters": filters},
            )
        )
    return questions


def _count_questions(rng, store, count):
    picks = _round_robin(rng, store.bundles(), count, lambda b: _pc_pool(b, min_accesses=1))
    questions = []
    for i, (bundle, pc) in enumerate(picks):
        occurrences = sum(1 for r in bundle.records if r.program_counter == pc)
        questions.append(
            BenchQuestion(
                id=f"tg-count-{i:03d}",
                tier="TG",
                category="Count",
                text=(
                    f"How many times did PC {to_hex(pc)} appear in {bundle.key.workload} "
                    f"under {bundle.key.policy}?"
                ),
                expected=Expected(kind="numeric", value=occurrences, tolerance=0.0),
                grounding=_grounding(bundle, pcs=[pc]),
            )
        )
    return questions


def _arithmetic_questions(rng, store, count):
    def evicted_pcs(bundle):
        pcs = set()
        for record in bundle.records:
            if record.evicted_address_reuse_distance_numeric is not None:
                pcs.add(record.program_counter)
        return sorted(pcs)

    def reused_pcs(bundle):
        pcs: dict = {}
        for record in bundle.records:
            if record.accessed_address_reuse_distance_numeric is not None:
                pcs[record.program_counter] = pcs.get(record.program_counter, 0) + 1
        return sorted(pc for pc, n in pcs.items() if n >= 2)

    questions = []
    evicted_picks = _round_robin(rng, store.bundles(), count - count // 2, evicted_pcs)
    accessed_picks = _round_robin(rng, store.bundles(), count // 2, reused_pcs)
    for i, (bundle, pc) in enumerate(evicted_picks):
        stats = pc_stats(bundle.records, pc)
        questions.append(
            BenchQuestion(
                id=f"tg-arithmetic-{i:03d}",
                tier="TG",
                category="Arithmetic",
                text=(
                    f"What is the average evicted reuse distance of PC {to_hex(pc)} for the "
                    f"{bundle.key.workload} workload with {bundle.key.policy}?"
                ),
                expected=Expected(
                    kind="numeric",
                    value=round(stats.mean_evicted_reuse_distance, 2),
                    tolerance=RATE_TOLERANCE,
                ),
                grounding=_grounding(bundle, pcs=[pc]),
            )
        )
    offset = len(evicted_picks)
    for i, (bundle, pc) in enumerate(accessed_picks):
        stats = pc_stats(bundle.records, pc)
        questions.append(
            BenchQuestion(
                id=f"tg-arithmetic-{offset + i:03d}",
                tier="TG",
                category="Arithmetic",
                text=(
                    f"What is the average accessed reuse distance of PC {to_hex(pc)} for the "
                    f"{bundle.key.workload} workload with {bundle.key.policy}?"
                ),
                expected=Expected(
                    kind="numeric",
                    value=round(stats.mean_accessed_reuse_distance, 2),
                    tolerance=RATE_TOLERANCE,
                ),
                grounding=_grounding(bundle, pcs=[pc]),
            )
        )
    return questions


def _trick_questions(rng, store, count):
    bundles = store.bundles()
    questions = []
    attempts = 0
    i = 0
    while len(questions) < count:
        attempts += 1
        if attempts > 1000:
            raise SuiteGenerationError("could not find enough absent PC/address pairs")
        bundle = bundles[rng.randrange(len(bundles))]
        donor = bundles[rng.randrange(len(bundles))]
        if donor.key.workload == bundle.key.workload:
            continue
        pc = rng.choice(_pc_pool(bundle))
        address = rng.choice(sorted({r.memory_address for r in donor.records}))
        if any(
            r.program_counter == pc and r.memory_address == address for r in bundle.records
        ):
            continue
        questions.append(
            BenchQuestion(
                id=f"tg-trick-{i:03d}",
                tier="TG",
                category="Trick",
                text=(
                    f"Does PC {to_hex(pc)} in {bundle.key.workload} access address "
                    f"{to_hex(address)} under {bundle.key.policy}?"
                ),
                expected=Expected(
                    kind="trick",
                    premise=(
                        f"PC {to_hex(pc)} never accesses address {to_hex(address)} in "
                        f"{bundle.key.canonical_id}; the address belongs to another workload"
                    ),
                ),
                grounding=_grounding(bundle, pcs=[pc], addresses=[address]),
            )
        )
        i += 1
    return questions


_MICROARCH = (
    (
        "How does increasing cache size affect the miss rate? Compare growing the number "
        "of sets against growing the number of ways.",
        "Larger caches cut capacity misses. Adding sets widens the index so unrelated lines "
        "collide less, attacking conflict misses; adding ways raises associativity within each "
        "set, also absorbing conflicts but with costlier lookups. Compulsory misses are "
        "unaffected by either.",
    ),
    (
        "Why can an offline-optimal replacement policy outperform LRU on scan-heavy workloads?",
        "A scan touches each line once, so recency is a poor reuse signal: LRU caches the scan "
        "and evicts the loop's working set. Knowing future reuse, the optimal policy evicts the "
        "scan lines immediately, because their next use is farthest in the future or absent.",
    ),
    (
        "What is a wrong eviction and why does it correlate with miss rate?",
        "A wrong eviction removes a line that would have been reused sooner than the line "
        "inserted in its place; the victim's next touch then misses, so traces with a high "
        "share of wrong evictions show inflated miss rates.",
    ),
    (
        "Explain compulsory, capacity and conflict misses in one sentence each.",
        "A compulsory miss is the first touch of a line. A capacity miss would occur even in a "
        "fully associative cache of equal size because the working set is too big. A conflict "
        "miss comes purely from set mapping: the fully associative equivalent would have hit.",
    ),
    (
        "Why do bypass policies insert some misses without caching them?",
        "Lines that are dead on arrival, never reused or reused far beyond the cache's reach, "
        "pollute the set and evict useful lines; skipping insertion for the PCs that produce "
        "them preserves the resident working set and raises the hit rate.",
    ),
)


def _microarch_questions():
    return [
        BenchQuestion(
            id=f"ara-microarchconcepts-{i:03d}",
            tier="ARA",
            category="MicroarchConcepts",
            text=text,
            expected=Expected(kind="rubric", reference=reference, criteria=_CRITERIA),
            grounding={},
        )
        for i, (text, reference) in enumerate(_MICROARCH)
    ]


def _codegen_questions(rng, store, count):
    picks = _round_robin(rng, store.bundles(), count, lambda b: _pc_pool(b, min_accesses=2))
    questions = []
    for i, (bundle, pc) in enumerate(picks):
        workload, policy = bundle.key.workload, bundle.key.policy
        program = (
            f"from {workload}/{policy} | filter program_counter = {to_hex(pc)} | "
            f'aggregate rate_pct is_miss | emit "The miss rate for PC {to_hex(pc)} is {{0}}%."'
        )
        parse_program(program)  # the reference answer must itself be valid
        questions.append(
            BenchQuestion(
                id=f"ara-codegeneration-{i:03d}",
                tier="ARA",
                category="CodeGeneration",
                text=(
                    f"Write a query program that computes the miss rate of PC {to_hex(pc)} in "
                    f"the {workload} workload under {policy}."
                ),
                expected=Expected(kind="rubric", reference=program, criteria=_CRITERIA),
                grounding=_grounding(bundle, pcs=[pc]),
            )
        )
    return questions


def _policy_analysis_questions(rng, store, count):
    candidates = []
    for workload in store.workloads():
        ranking = compare_policies(store, workload)
        if len(ranking) >= 2 and ranking[0][1] < ranking[-1][1]:
            candidates.append((workload, ranking))
    questions = []
    for i in range(count):
        workload, ranking = candidates[i % len(candidates)]
        best, best_rate = ranking[0]
        worst, worst_rate = ranking[-1]
        reference = (
            f"On {workload}, {best} reaches a {best_rate:.2f}% miss rate versus {worst_rate:.2f}% "
            f"for {worst}. {best} keeps lines whose next reuse arrives sooner, avoiding wrong "
            f"evictions of the resident working set, while {worst} relies on a weaker signal and "
            f"evicts lines that are reused earlier than their replacements."
        )
        questions.append(
            BenchQuestion(
                id=f"ara-policyanalysis-{i:03d}",
                tier="ARA",
                category="PolicyAnalysis",
                text=f"Why does {best} achieve a lower miss rate than {worst} on the {workload} workload?",
                expected=Expected(kind="rubric", reference=reference, criteria=_CRITERIA),
                grounding={"key": f"{workload}_evictions_*", "filters": {}},
            )
        )
    return questions


def _workload_analysis_questions(rng, store, count):
    policies = store.policies()
    questions = []
    for i in range(count):
        policy = policies[i % len(policies)]
        rates = []
        for workload in store.workloads():
            bundle = store.get(workload, policy)
            if bundle is None:
                continue
            misses = sum(r.is_miss for r in bundle.records)
            rates.append((workload, 100.0 * misses / len(bundle.records)))
        rates.sort(key=lambda pair: -pair[1])
        ranking_text = ", ".join(f"{w} {rate:.2f}%" for w, rate in rates)
        reference = (
            f"Under {policy}, the highest miss rate belongs to {rates[0][0]} "
            f"({rates[0][1]:.2f}%). Full ranking: {ranking_text}."
        )
        questions.append(
            BenchQuestion(
                id=f"ara-workloadanalysis-{i:03d}",
                tier="ARA",
                category="WorkloadAnalysis",
                text=f"Which workload has the highest cache miss rate under {policy}?",
                expected=Expected(kind="rubric", reference=reference, criteria=_CRITERIA),
                grounding={"key": f"*_evictions_{policy}", "filters": {}},
            )
        )
    return questions


def _semantic_questions(rng, store, count):
    picks = []
    for bundle in store.bundles():
        try:
            pc, _, miss_rate = top_miss_pc(bundle.records)
        except NoMisses:
            continue
        sample = next(r for r in bundle.records if r.program_counter == pc)
        if sample.function_name:
            picks.append((bundle, pc, miss_rate, sample.function_name))
    if len(picks) < count:
        raise SuiteGenerationError("not enough enriched bundles for semantic questions")
    rng.shuffle(picks)
    questions = []
    for i, (bundle, pc, miss_rate, function_name) in enumerate(picks[:count]):
        stats = pc_stats(bundle.records, pc)
        reuse = (
            f"mean reuse distance {stats.mean_accessed_reuse_distance:.2f} accesses"
            if stats.mean_accessed_reuse_distance is not None
            else "no observed reuse"
        )
        reference = (
            f"PC {to_hex(pc)} sits in {function_name} and causes the most misses in "
            f"{bundle.key.canonical_id} ({miss_rate:.2f}% miss rate, {reuse}). The access "
            f"pattern of {function_name} explains it: its lines return too late (or never), "
            f"so they are evicted before reuse."
        )
        questions.append(
            BenchQuestion(
                id=f"ara-semanticanalysis-{i:03d}",
                tier="ARA",
                category="SemanticAnalysis",
                text=(
                    f"Why does PC {to_hex(pc)} ({function_name}) miss so often in the "
                    f"{bundle.key.workload} workload under {bundle.key.policy}? "
                    f"Use the assembly context."
                ),
                expected=Expected(kind="rubric", reference=reference, criteria=_CRITERIA),
                grounding=_grounding(bundle, pcs=[pc]),
            )
        )
    return questions


def make_question_suite(store: TraceStore, seed: int = 0, tg_counts: Optional[dict] = None) -> list:
    """Deterministic, verified question list shaped like the two-tier suite."""
    counts = dict(DEFAULT_TG_COUNTS if tg_counts is None else tg_counts)
    rng = random.Random(seed)
    questions = []
    questions += _hitmiss_questions(rng, store, counts["HitMiss"])
    questions += _missrate_questions(rng, store, counts["MissRate"])
    questions += _comparison_questions(rng, store, counts["PolicyComparison"])
    questions += _count_questions(rng, store, counts["Count"])
    questions += _arithmetic_questions(rng, store, counts["Arithmetic"])
    questions += _trick_questions(rng, store, counts["Trick"])
    questions += _microarch_questions()[:ARA_PER_CATEGORY]
    questions += _codegen_questions(rng, store, ARA_PER_CATEGORY)
    questions += _policy_analysis_questions(rng, store, ARA_PER_CATEGORY)
    questions += _workload_analysis_questions(rng, store, ARA_PER_CATEGORY)
    questions += _semantic_questions(rng, store, ARA_PER_CATEGORY)
    for question in questions:
        question.validate()
    return questions
