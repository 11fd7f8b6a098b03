"""Total evaluator for query programs.

Stages apply left to right over the selected bundle's record table (or its
metadata string); there is no recursion or looping in the language, so every
parseable program terminates, and evaluation only reads the store.

An empty match is not an exception: the evaluator returns an EvalResult
flagged `empty` whose text is an explicit not-found message, so callers can
either surface it as the answer or feed it back for a retry.  Misapplied
stages (aggregating a string column, sorting grouped output by a record
column, ...) raise EvalError with a message suitable for model feedback.

Rendering: ints print bare, floats with two decimals, grouped output as
"key=value" pairs; program_counter / address group keys render as hex.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cacheqa.errors import CacheQAError
from cacheqa.ranger.dsl import (
    AggregateStage,
    FilterStage,
    GroupByStage,
    LimitStage,
    MetadataExtractStage,
    QueryProgram,
    SortStage,
)
from cacheqa.sieve import BundleNotFound
from cacheqa.trace_model import COLUMNS, TraceStore, to_hex


class EvalError(CacheQAError):
    """A stage was applied to a value shape or type it cannot handle."""


@dataclass
class EvalResult:
    text: str
    empty: bool = False


_HEX_KEY_COLUMNS = {"program_counter", "memory_address", "evicted_address"}


class _Records:
    def __init__(self, rows: list):
        self.rows = rows


class _Grouped:
    def __init__(self, column: str, groups: list):
        self.column = column
        self.groups = groups  # list of (key, list-of-records), key order deterministic


class _GroupedScalars:
    def __init__(self, column: str, pairs: list):
        self.column = column
        self.pairs = pairs  # list of (key, scalar)


@dataclass
class _Scalar:
    value: object


@dataclass
class _Text:
    value: str


def _render_scalar(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.2f}"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, (list, tuple)):
        return json.dumps(value)
    return str(value)


def _render_key(column: str, key) -> str:
    if column in _HEX_KEY_COLUMNS and isinstance(key, int):
        return to_hex(key)
    return _render_scalar(key)


def _numeric_values(column: str, rows: list) -> list:
    values = []
    for row in rows:
        value = COLUMNS[column](row)
        if value is None:
            continue
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise EvalError(f"aggregate needs numeric values but column {column!r} holds {type(value).__name__}")
        values.append(value)
    return values


def _aggregate_rows(fn: str, column: Optional[str], rows: list):
    if fn == "count":
        return len(rows)
    if fn == "first":
        return COLUMNS[column](rows[0])
    values = _numeric_values(column, rows)
    if not values:
        return None  # nothing numeric to aggregate: empty result
    if fn == "sum":
        return float(sum(values))
    if fn == "mean":
        return float(np.mean(values))
    if fn == "std":
        if len(values) < 2:
            raise EvalError("std requires at least 2 values")
        return float(np.std(values, ddof=1))
    if fn == "min":
        return min(values)
    if fn == "max":
        return max(values)
    if fn == "rate_pct":
        return 100.0 * float(np.mean([1.0 if v else 0.0 for v in values]))
    raise EvalError(f"unknown aggregate {fn!r}")


def _compare(op: str, value, literal) -> bool:
    if value is None:
        return False
    if op == "in":
        return value in literal
    if op == "=":
        return value == literal
    if op == "!=":
        return value != literal
    try:
        if op == "<":
            return value < literal
        if op == "<=":
            return value <= literal
        if op == ">":
            return value > literal
        if op == ">=":
            return value >= literal
    except TypeError:
        raise EvalError(
            f"cannot compare {type(value).__name__} column value with "
            f"{type(literal).__name__} literal {literal!r}"
        )
    raise EvalError(f"unknown operator {op!r}")


def _not_found(program: QueryProgram, detail: str) -> EvalResult:
    return EvalResult(
        text=f"No matching data found in {program.source.canonical_id}: {detail}",
        empty=True,
    )


def evaluate(program: QueryProgram, store: TraceStore) -> EvalResult:
    """Run the pipeline and bind the emit template; never mutates the store."""
    canonical = program.source.canonical_id
    if canonical not in store:
        raise BundleNotFound(
            f"no trace named {canonical!r}; available: {', '.join(store.keys())}"
        )
    bundle = store[canonical]

    if program.source.metadata:
        value = _Text(bundle.metadata)
    else:
        value = _Records(list(bundle.records))

    for stage in program.stages:
        if isinstance(stage, FilterStage):
            if not isinstance(value, _Records):
                raise EvalError("filter applies to records; use it before aggregation")
            getter = COLUMNS[stage.column]
            value = _Records([r for r in value.rows if _compare(stage.op, getter(r), stage.literal)])
        elif isinstance(stage, GroupByStage):
            if not isinstance(value, _Records):
                raise EvalError("group_by applies to records")
            buckets: dict = {}
            getter = COLUMNS[stage.column]
            for row in value.rows:
                key = getter(row)
                if isinstance(key, list):
                    raise EvalError(f"group_by needs a scalar column, not {stage.column!r}")
                buckets.setdefault(key, []).append(row)
            ordered = sorted(buckets.items(), key=lambda kv: (kv[0] is None, str(type(kv[0])), kv[0]))
            value = _Grouped(stage.column, ordered)
        elif isinstance(stage, AggregateStage):
            if isinstance(value, _Records):
                if not value.rows:
                    return _not_found(program, "the filters matched no records")
                result = _aggregate_rows(stage.fn, stage.column, value.rows)
                if result is None:
                    return _not_found(program, f"column {stage.column!r} has no values to aggregate")
                value = _Scalar(result)
            elif isinstance(value, _Grouped):
                if not value.groups:
                    return _not_found(program, "the filters matched no records")
                pairs = []
                for key, rows in value.groups:
                    result = _aggregate_rows(stage.fn, stage.column, rows)
                    if result is not None:
                        pairs.append((key, result))
                if not pairs:
                    return _not_found(program, f"column {stage.column!r} has no values to aggregate")
                value = _GroupedScalars(value.column, pairs)
            elif isinstance(value, _GroupedScalars):
                scalars = [v for _, v in value.pairs]
                if stage.fn == "count":
                    value = _Scalar(len(scalars))
                elif stage.fn == "first":
                    value = _Scalar(scalars[0])
                else:
                    rowsless = _aggregate_scalars(stage.fn, scalars)
                    value = _Scalar(rowsless)
            else:
                raise EvalError("aggregate cannot apply twice to a single scalar")
        elif isinstance(stage, SortStage):
            if isinstance(value, _Records):
                if stage.key in ("key", "value"):
                    raise EvalError("sorting records needs a column name, not key/value")
                getter = COLUMNS[stage.key]
                decorated = [((getter(r) is None, getter(r)), i, r) for i, r in enumerate(value.rows)]
                try:
                    decorated.sort(key=lambda t: (t[0], t[1]), reverse=(stage.direction == "desc"))
                except TypeError:
                    raise EvalError(f"column {stage.key!r} holds mixed types and cannot be sorted")
                value = _Records([r for _, _, r in decorated])
            elif isinstance(value, _GroupedScalars):
                index = 0 if stage.key == "key" else 1
                if stage.key not in ("key", "value"):
                    raise EvalError("sorting grouped output uses 'key' or 'value'")
                try:
                    pairs = sorted(value.pairs, key=lambda kv: kv[index], reverse=(stage.direction == "desc"))
                except TypeError:
                    raise EvalError("grouped output holds mixed types and cannot be sorted")
                value = _GroupedScalars(value.column, pairs)
            else:
                raise EvalError("sort applies to records or grouped output")
        elif isinstance(stage, LimitStage):
            if isinstance(value, _Records):
                value = _Records(value.rows[: stage.n])
            elif isinstance(value, _Grouped):
                value = _Grouped(value.column, value.groups[: stage.n])
            elif isinstance(value, _GroupedScalars):
                value = _GroupedScalars(value.column, value.pairs[: stage.n])
            else:
                raise EvalError("limit applies to records or grouped output")
        elif isinstance(stage, MetadataExtractStage):
            if not isinstance(value, _Text):
                raise EvalError("metadata_extract applies to the metadata string")
            match = re.search(stage.pattern, value.value)
            if not match:
                return _not_found(program, f"regex {stage.pattern!r} matched nothing in the metadata")
            value = _Text(match.group(1))

    return _emit(program, value)


def _aggregate_scalars(fn: str, scalars: list):
    values = [v for v in scalars if isinstance(v, (int, float)) and not isinstance(v, bool)]
    if not values:
        raise EvalError("grouped values are not numeric")
    if fn == "sum":
        return float(sum(values))
    if fn == "mean":
        return float(np.mean(values))
    if fn == "std":
        if len(values) < 2:
            raise EvalError("std requires at least 2 values")
        return float(np.std(values, ddof=1))
    if fn == "min":
        return min(values)
    if fn == "max":
        return max(values)
    if fn == "rate_pct":
        return 100.0 * float(np.mean([1.0 if v else 0.0 for v in values]))
    raise EvalError(f"unknown aggregate {fn!r}")


def _render_value(value) -> tuple:
    """(rendered text, is_empty) for the final pipeline value."""
    if isinstance(value, _Scalar):
        return _render_scalar(value.value), False
    if isinstance(value, _Text):
        return value.value, False
    if isinstance(value, _GroupedScalars):
        rendered = ", ".join(
            f"{_render_key(value.column, k)}={_render_scalar(v)}" for k, v in value.pairs
        )
        return rendered, not value.pairs
    if isinstance(value, _Grouped):
        rendered = ", ".join(_render_key(value.column, k) for k, _ in value.groups)
        return rendered, not value.groups
    if isinstance(value, _Records):
        rows = value.rows
        if not rows:
            return "", True
        shown = "; ".join(
            f"(pc={to_hex(r.program_counter)}, addr={to_hex(r.memory_address)}, {r.evict.value})"
            for r in rows[:10]
        )
        suffix = f"; ... {len(rows) - 10} more" if len(rows) > 10 else ""
        return f"{len(rows)} records: {shown}{suffix}", False
    raise EvalError(f"cannot render {type(value).__name__}")


def _emit(program: QueryProgram, value) -> EvalResult:
    rendered, is_empty = _render_value(value)
    if is_empty:
        return _not_found(program, "the filters matched no records")
    # "{0}" binds the pipeline output; a template without it stands alone
    text = program.emit.replace("{0}", rendered) if "{0}" in program.emit else program.emit
    return EvalResult(text=text, empty=False)
