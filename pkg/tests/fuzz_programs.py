"""Random query-program generator for evaluator totality checks.

Programs are structurally valid (they survive the parser) but deliberately
free to misapply stages — aggregating string columns, sorting grouped output
by a record column, filtering against mismatched literal types — so the
evaluator's error discipline gets exercised alongside its happy paths.
"""

from __future__ import annotations

import random

from cacheqa.ranger.dsl import (
    AggregateStage,
    FilterStage,
    GroupByStage,
    LimitStage,
    MetadataExtractStage,
    QueryProgram,
    SortStage,
    Source,
)
from cacheqa.trace_model import COLUMNS

_COLUMNS = list(COLUMNS)
_OPS = ["=", "!=", "<", "<=", ">", ">=", "in"]
_FNS = ["count", "sum", "mean", "std", "min", "max", "rate_pct", "first"]
_PATTERNS = [
    r"([0-9.]+)% miss rate",
    r"(\d+) total accesses",
    r"(\d+) total misses",
    r"(zzz)never-matches",
    r"cache misses is (-?[0-9.]+)",
]
_TEMPLATES = ["{0}", "Result: {0}", "static answer", "The value is {0}.", ""]


def _literal(rng: random.Random):
    choice = rng.randrange(5)
    if choice == 0:
        return rng.randrange(0, 1 << 20)
    if choice == 1:
        return round(rng.uniform(-10, 1000), 2)
    if choice == 2:
        return rng.choice(["Cache Hit", "Cache Miss", "Capacity", "bogus"])
    if choice == 3:
        return rng.choice([0x401120, 0x2A9E6A40000, 0x403270])
    return tuple(rng.randrange(0, 100) for _ in range(rng.randint(1, 3)))


def _record_stage(rng: random.Random):
    kind = rng.randrange(5)
    if kind == 0:
        op = rng.choice(_OPS)
        literal = _literal(rng)
        if op == "in" and not isinstance(literal, tuple):
            literal = (literal,) if not isinstance(literal, tuple) else literal
        if op != "in" and isinstance(literal, tuple):
            op = "in"
        return FilterStage(column=rng.choice(_COLUMNS), op=op, literal=literal)
    if kind == 1:
        return GroupByStage(column=rng.choice(_COLUMNS))
    if kind == 2:
        fn = rng.choice(_FNS)
        column = None if fn == "count" and rng.random() < 0.5 else rng.choice(_COLUMNS)
        return AggregateStage(fn=fn, column=column)
    if kind == 3:
        key = rng.choice(_COLUMNS + ["key", "value"])
        return SortStage(key=key, direction=rng.choice(["asc", "desc"]))
    return LimitStage(n=rng.randint(1, 20))


def random_program(rng: random.Random, keys: list) -> QueryProgram:
    if rng.random() < 0.9:
        workload, policy = rng.choice(keys).split("_evictions_")
    else:
        workload, policy = "ghost", "nope"  # exercise the unknown-bundle path
    metadata = rng.random() < 0.3
    source = Source(workload=workload, policy=policy, metadata=metadata)
    if metadata:
        stages = tuple(
            MetadataExtractStage(pattern=rng.choice(_PATTERNS)) for _ in range(rng.randint(0, 2))
        )
    else:
        stages = tuple(_record_stage(rng) for _ in range(rng.randint(0, 4)))
    return QueryProgram(source=source, stages=stages, emit=rng.choice(_TEMPLATES))
