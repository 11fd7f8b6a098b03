"""System prompt construction and the generate/parse/evaluate retry loop."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from cacheqa.errors import CacheQAError
from cacheqa.ranger.dsl import (
    EmitError,
    ParseError,
    QueryProgram,
    SchemaError,
    parse_program,
)
from cacheqa.ranger.runtime import EvalError, evaluate
from cacheqa.sieve import BundleNotFound
from cacheqa.trace_model import COLUMNS, TraceKey, TraceStore


class ExhaustedRetries(CacheQAError):
    """Every attempt failed to produce an evaluable program."""

    def __init__(self, attempts: int, transcript: list):
        self.attempts = attempts
        self.transcript = transcript
        last = transcript[-1][1] if transcript else "no attempts recorded"
        super().__init__(f"all {attempts} attempts failed; last error: {last}")


@dataclass
class RangerOutcome:
    """Final result of one retrieval session.

    `transcript` holds one (generated text, error) pair per failed attempt.
    A program that parses and evaluates but matches nothing counts as a
    success whose result is the evaluator's explicit not-found message.
    """

    result: str
    program: QueryProgram
    attempts: int
    transcript: list = field(default_factory=list)

    @property
    def provenance(self) -> dict:
        from cacheqa.ranger.dsl import pretty_print

        return {
            "key": self.program.source.canonical_id,
            "program": pretty_print(self.program),
            "attempts": self.attempts,
        }


_GRAMMAR = """\
program   = source { "|" stage } "|" emit ;
source    = "from" [ "metadata" ] workload "/" policy ;
stage     = "filter" column op literal
          | "group_by" column
          | "aggregate" fn [ column ]
          | "sort" ( column | "key" | "value" ) ( "asc" | "desc" )
          | "limit" int
          | "metadata_extract" "regex with one capture group" ;
op        = "=" | "!=" | "<" | "<=" | ">" | ">=" | "in" ;
fn        = "count" | "sum" | "mean" | "std" | "min" | "max" | "rate_pct" | "first" ;
literal   = 0xhex | int | float | "string" | "[" literal { "," literal } "]" ;
emit      = "emit" "template string, {0} = pipeline output" ;"""


def build_system_prompt(store: TraceStore) -> str:
    """Deterministic prompt enumerating keys, columns, grammar and rules.

    Pure function of the store schema: same keys in, same bytes out.
    """
    keys = store.keys()
    if not keys:
        raise BundleNotFound("cannot build a retrieval prompt over an empty store")
    first = TraceKey.parse(keys[0])
    key_list = "\n".join(f"  {k}" for k in keys)
    columns = ", ".join(COLUMNS)
    return f"""You are a query-writing assistant for annotated cache access trace data.
Answer every question by emitting exactly one program in the query language
below. No prose, no markdown fences, no explanations: just the program.

Data Structure Overview
- Available traces (one per workload/policy pair):
{key_list}
- Record columns:
  {columns}
- evict holds "Cache Hit" or "Cache Miss"; is_miss holds 1/0.
- Each trace also has a one-line metadata summary string (totals, miss rate,
  eviction counts, correlations).
- Extract numbers with simple matching or regex over that string, e.g.
  metadata_extract "([0-9.]+)% miss rate".

Query language (EBNF)
{_GRAMMAR}

Task Instructions
- First check matching workload/policy; then check PC/address; finally fall
  back to metadata.
- Filters take hex literals for program_counter and memory_address.
- Return a single result string via emit; write it as a full sentence, e.g.
  "The miss rate for PC 0x401e31 is 44.69%."
- If nothing is found, the engine returns a clear not-found message.

Valid Examples
  from {first.workload}/{first.policy} | filter program_counter = 0x401e31 | aggregate rate_pct is_miss | emit "The miss rate for PC 0x401e31 is {{0}}%."
  from metadata {first.workload}/{first.policy} | metadata_extract "([0-9.]+)% miss rate" | emit "The miss rate is {{0}}%."

Invalid Examples
  result = df["miss_rate"]   (not a query program; this language has no variables)
  from {first.workload}/{first.policy} | emit result   (emit takes a quoted template string)
"""


_FENCE_RE = re.compile(r"```(?:[\w-]*)\n(.*?)```", re.DOTALL)


def extract_program_text(completion: str) -> str:
    """First fenced code block if present, else the whole completion."""
    match = _FENCE_RE.search(completion)
    return (match.group(1) if match else completion).strip()


_RETRYABLE = (ParseError, SchemaError, EmitError, EvalError, BundleNotFound)


def retrieve(
    question: str,
    client,
    store: TraceStore,
    max_retries: int = 3,
    system_prompt: Optional[str] = None,
) -> RangerOutcome:
    """generate -> parse -> evaluate, feeding errors back up to `max_retries` times.

    A persistent empty match ends the session with the not-found message as
    the result; persistent parse/evaluation failures raise ExhaustedRetries
    with the full transcript.
    """
    messages = [
        {"role": "system", "content": system_prompt or build_system_prompt(store)},
        {"role": "user", "content": question},
    ]
    transcript: list = []
    last_empty = None
    attempts = 0
    for attempts in range(1, max_retries + 2):
        completion = client.chat(messages)
        text = extract_program_text(completion)
        try:
            program = parse_program(text)
            result = evaluate(program, store)
        except _RETRYABLE as exc:
            error = f"{type(exc).__name__}: {exc}"
            transcript.append((completion, error))
            messages.append({"role": "assistant", "content": completion})
            messages.append(
                {"role": "user", "content": f"That program failed: {error}. Reply with a corrected program only."}
            )
            continue
        if result.empty:
            transcript.append((completion, f"EmptyResult: {result.text}"))
            last_empty = (result, program)
            messages.append({"role": "assistant", "content": completion})
            messages.append(
                {
                    "role": "user",
                    "content": (
                        f"The program matched nothing: {result.text} "
                        "Loosen the filters or fall back to metadata, and reply with a corrected program only."
                    ),
                }
            )
            continue
        return RangerOutcome(result=result.text, program=program, attempts=attempts, transcript=transcript)
    if last_empty is not None:
        result, program = last_empty
        return RangerOutcome(result=result.text, program=program, attempts=attempts, transcript=transcript)
    raise ExhaustedRetries(attempts, transcript)
