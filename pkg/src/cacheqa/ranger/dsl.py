"""Grammar, AST, parser and canonical printer for the trace query language.

    program   = source { "|" stage } "|" emit ;
    source    = "from" [ "metadata" ] ident "/" ident ;
    stage     = "filter" column op literal
              | "group_by" column
              | "aggregate" fn [ column ]
              | "sort" ( column | "key" | "value" ) ( "asc" | "desc" )
              | "limit" int
              | "metadata_extract" string ;
    op        = "=" | "!=" | "<" | "<=" | ">" | ">=" | "in" ;
    fn        = "count" | "sum" | "mean" | "std" | "min" | "max"
              | "rate_pct" | "first" ;
    literal   = hex | int | float | string | "[" literal { "," literal } "]" ;

Strings are double-quoted with JSON escapes.  `metadata_extract` takes a
regex with exactly one capture group and is only valid on metadata sources;
record stages are only valid on trace sources.  The emit template may use
the placeholder `{0}` for the pipeline output.

Parse errors carry the offending position and an expected-token message so
they can be fed back to the emitting model verbatim.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional, Union

from cacheqa.errors import CacheQAError
from cacheqa.trace_model import COLUMNS, to_hex


class ParseError(CacheQAError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class SchemaError(CacheQAError):
    def __init__(self, column: str, position: int):
        self.column = column
        self.position = position
        super().__init__(f"unknown column {column!r} (at position {position})")


class EmitError(CacheQAError):
    """Emit template references a placeholder the pipeline does not bind."""


OPS = ("=", "!=", "<", "<=", ">", ">=", "in")
AGGREGATE_FNS = ("count", "sum", "mean", "std", "min", "max", "rate_pct", "first")
DIRECTIONS = ("asc", "desc")
_HEX_COLUMNS = {"program_counter", "memory_address", "evicted_address"}


@dataclass(frozen=True)
class Source:
    workload: str
    policy: str
    metadata: bool = False

    @property
    def canonical_id(self) -> str:
        return f"{self.workload}_evictions_{self.policy}"


@dataclass(frozen=True)
class FilterStage:
    column: str
    op: str
    literal: Union[int, float, str, tuple]


@dataclass(frozen=True)
class GroupByStage:
    column: str


@dataclass(frozen=True)
class AggregateStage:
    fn: str
    column: Optional[str] = None


@dataclass(frozen=True)
class SortStage:
    key: str
    direction: str


@dataclass(frozen=True)
class LimitStage:
    n: int


@dataclass(frozen=True)
class MetadataExtractStage:
    pattern: str


Stage = Union[FilterStage, GroupByStage, AggregateStage, SortStage, LimitStage, MetadataExtractStage]


@dataclass(frozen=True)
class QueryProgram:
    source: Source
    stages: tuple
    emit: str


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<hex>0x[0-9a-fA-F]+)
  | (?P<float>-?\d+\.\d+)
  | (?P<int>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<op><=|>=|!=|[=<>|/\[\],])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def _position(self) -> int:
        return self.tokens[self.i].position if self.i < len(self.tokens) else len(self.text)

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self, kind: str = None, text: str = None, expected: str = None) -> _Token:
        token = self.peek()
        want = expected or text or kind
        if token is None:
            raise ParseError(f"expected {want}, found end of program", self._position())
        if (kind and token.kind != kind) or (text and token.text != text):
            raise ParseError(f"expected {want}, found {token.text!r}", token.position)
        self.i += 1
        return token

    def take_keyword(self, *words: str) -> _Token:
        token = self.take(kind="ident", expected=" or ".join(repr(w) for w in words))
        if token.text not in words:
            raise ParseError(
                f"expected {' or '.join(repr(w) for w in words)}, found {token.text!r}",
                token.position,
            )
        return token

    def column(self) -> str:
        token = self.take(kind="ident", expected="a column name")
        if token.text not in COLUMNS:
            raise SchemaError(token.text, token.position)
        return token.text

    def string(self) -> str:
        token = self.take(kind="string", expected="a quoted string")
        try:
            return json.loads(token.text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad string literal: {exc.msg}", token.position) from exc

    def literal(self):
        token = self.peek()
        if token is None:
            raise ParseError("expected a literal, found end of program", self._position())
        if token.kind == "hex":
            self.i += 1
            return int(token.text, 16)
        if token.kind == "int":
            self.i += 1
            return int(token.text)
        if token.kind == "float":
            self.i += 1
            return float(token.text)
        if token.kind == "string":
            return self.string()
        if token.text == "[":
            self.i += 1
            items = [self.literal()]
            while self.peek() and self.peek().text == ",":
                self.i += 1
                items.append(self.literal())
            self.take(text="]")
            return tuple(items)
        raise ParseError(f"expected a literal, found {token.text!r}", token.position)

    def source(self) -> Source:
        self.take_keyword("from")
        token = self.take(kind="ident", expected="a trace key or 'metadata'")
        metadata = token.text == "metadata"
        if metadata:
            token = self.take(kind="ident", expected="a workload name")
        workload = token.text
        self.take(text="/", expected="'/' between workload and policy")
        policy = self.take(kind="ident", expected="a policy name").text
        return Source(workload=workload, policy=policy, metadata=metadata)

    def stage(self) -> Stage:
        token = self.take(kind="ident", expected="a pipeline stage")
        position = token.position
        name = token.text
        if name == "filter":
            column = self.column()
            op_token = self.peek()
            if op_token is None or (op_token.text not in OPS):
                raise ParseError(
                    f"expected a comparison operator ({', '.join(OPS)})", self._position()
                )
            self.i += 1
            literal = self.literal()
            if op_token.text == "in" and not isinstance(literal, tuple):
                raise ParseError("'in' requires a [list] literal", position)
            return FilterStage(column=column, op=op_token.text, literal=literal)
        if name == "group_by":
            return GroupByStage(column=self.column())
        if name == "aggregate":
            fn_token = self.take(kind="ident", expected="an aggregate function")
            if fn_token.text not in AGGREGATE_FNS:
                raise ParseError(
                    f"expected one of {', '.join(AGGREGATE_FNS)}, found {fn_token.text!r}",
                    fn_token.position,
                )
            column = None
            nxt = self.peek()
            if nxt is not None and nxt.kind == "ident" and nxt.text != "emit" and not (
                nxt.text in ("filter", "group_by", "aggregate", "sort", "limit", "metadata_extract")
            ):
                column = self.column()
            if fn_token.text != "count" and column is None:
                raise ParseError(f"aggregate {fn_token.text!r} requires a column", fn_token.position)
            return AggregateStage(fn=fn_token.text, column=column)
        if name == "sort":
            key_token = self.take(kind="ident", expected="a sort key (column, 'key' or 'value')")
            if key_token.text not in ("key", "value") and key_token.text not in COLUMNS:
                raise SchemaError(key_token.text, key_token.position)
            direction = self.take_keyword(*DIRECTIONS).text
            return SortStage(key=key_token.text, direction=direction)
        if name == "limit":
            n_token = self.take(kind="int", expected="a limit count")
            n = int(n_token.text)
            if n < 1:
                raise ParseError("limit must be >= 1", n_token.position)
            return LimitStage(n=n)
        if name == "metadata_extract":
            pos = self._position()
            pattern = self.string()
            try:
                compiled = re.compile(pattern)
            except re.error as exc:
                raise ParseError(f"bad regex: {exc}", pos) from exc
            if compiled.groups != 1:
                raise ParseError("metadata_extract regex needs exactly one capture group", pos)
            return MetadataExtractStage(pattern=pattern)
        raise ParseError(
            "expected one of filter, group_by, aggregate, sort, limit, metadata_extract, emit; "
            f"found {name!r}",
            position,
        )

    def program(self) -> QueryProgram:
        source = self.source()
        stages = []
        emit = None
        while True:
            self.take(text="|", expected="'|' then a stage or emit")
            nxt = self.peek()
            if nxt is not None and nxt.kind == "ident" and nxt.text == "emit":
                self.i += 1
                emit = self.string()
                break
            stages.append(self.stage())
        if self.peek() is not None:
            raise ParseError(
                f"trailing input after emit: {self.peek().text!r}", self.peek().position
            )
        for index in (int(m) for m in re.findall(r"\{(\d+)\}", emit)):
            if index != 0:
                raise EmitError(f"emit placeholder {{{index}}} is not bound; only {{0}} is available")
        for stage in stages:
            record_stage = not isinstance(stage, MetadataExtractStage)
            if source.metadata and record_stage:
                raise ParseError(
                    f"{type(stage).__name__} does not apply to a metadata source", 0
                )
            if not source.metadata and not record_stage:
                raise ParseError("metadata_extract requires 'from metadata <key>'", 0)
        return QueryProgram(source=source, stages=tuple(stages), emit=emit)


def parse_program(text: str) -> QueryProgram:
    """Parse one program; raises ParseError/SchemaError with positions."""
    if not text or not text.strip():
        raise ParseError("empty program", 0)
    return _Parser(text.strip()).program()


# --- canonical printer -----------------------------------------------------


def _print_literal(value, column: Optional[str] = None) -> str:
    if isinstance(value, tuple):
        return "[" + ", ".join(_print_literal(v, column) for v in value) + "]"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int) and column in _HEX_COLUMNS:
        return to_hex(value)
    if isinstance(value, float):
        text = repr(value)
        return f"{value:.12f}" if "e" in text or "E" in text else text
    if isinstance(value, int):
        return repr(value)
    return json.dumps(value)


def pretty_print(program: QueryProgram) -> str:
    """Canonical single-line form; parse(pretty_print(p)) == p."""
    head = "from "
    if program.source.metadata:
        head += "metadata "
    head += f"{program.source.workload}/{program.source.policy}"
    parts = [head]
    for stage in program.stages:
        if isinstance(stage, FilterStage):
            parts.append(f"filter {stage.column} {stage.op} {_print_literal(stage.literal, stage.column)}")
        elif isinstance(stage, GroupByStage):
            parts.append(f"group_by {stage.column}")
        elif isinstance(stage, AggregateStage):
            parts.append(f"aggregate {stage.fn}" + (f" {stage.column}" if stage.column else ""))
        elif isinstance(stage, SortStage):
            parts.append(f"sort {stage.key} {stage.direction}")
        elif isinstance(stage, LimitStage):
            parts.append(f"limit {stage.n}")
        elif isinstance(stage, MetadataExtractStage):
            parts.append(f"metadata_extract {json.dumps(stage.pattern)}")
    parts.append(f"emit {json.dumps(program.emit)}")
    return " | ".join(parts)
