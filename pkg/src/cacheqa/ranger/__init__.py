"""Model-driven retriever built on a closed, sandboxed query language.

Instead of executing model-generated general-purpose code, the model emits a
program in a small pipeline DSL (filter / group_by / aggregate / sort /
limit / metadata_extract / emit) that a total evaluator runs against the
read-only trace store.  Every program terminates, touches nothing but the
store, and produces a single result string; parse and evaluation errors are
fed back to the model for a bounded number of retries.
"""

from cacheqa.ranger.dsl import (
    AggregateStage,
    EmitError,
    FilterStage,
    GroupByStage,
    LimitStage,
    MetadataExtractStage,
    ParseError,
    QueryProgram,
    SchemaError,
    SortStage,
    Source,
    parse_program,
    pretty_print,
)
from cacheqa.ranger.runtime import EvalError, EvalResult, evaluate
from cacheqa.ranger.agent import (
    ExhaustedRetries,
    RangerOutcome,
    build_system_prompt,
    extract_program_text,
    retrieve,
)

__all__ = [
    "AggregateStage",
    "EmitError",
    "EvalError",
    "EvalResult",
    "ExhaustedRetries",
    "FilterStage",
    "GroupByStage",
    "LimitStage",
    "MetadataExtractStage",
    "ParseError",
    "QueryProgram",
    "RangerOutcome",
    "SchemaError",
    "SortStage",
    "Source",
    "build_system_prompt",
    "evaluate",
    "extract_program_text",
    "parse_program",
    "pretty_print",
    "retrieve",
]
