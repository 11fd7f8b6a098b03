"""Trace file parsing and source-level enrichment.

Input trace format: text, one access per line as `<pc_hex> <address_hex>`,
blank lines and `#` comments skipped.  The symbol sidecar is JSONL with one
object per PC: {"pc": "0x409270", "function_name": ..., "assembly_code": ...,
"function_code": ...}.  Symbol extraction from binaries is out of scope; the
sidecar decouples it.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from cacheqa.errors import CacheQAError
from cacheqa.trace_model import from_hex, to_hex


class ParseError(CacheQAError):
    """Malformed trace or sidecar input, with line position attached."""

    def __init__(self, message: str, *, path: str = "", line: int = 0):
        self.path = path
        self.line = line
        super().__init__(f"{message} [{path}:{line}]" if path else f"{message} [line {line}]")


class DuplicatePcWarning(UserWarning):
    """Two sidecar entries share a PC; the later one wins."""


@dataclass
class SymbolMap:
    """PC -> {function_name, assembly_code, function_code} context entries."""

    entries: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, pc: int) -> dict:
        return self.entries.get(pc, {"function_name": "", "assembly_code": "", "function_code": ""})


def parse_trace_file(path) -> list:
    """Read accesses in file order as (pc, address) integer pairs."""
    accesses = []
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected '<pc> <address>', got {raw!r}", path=str(path), line=line_no)
        try:
            accesses.append((from_hex(parts[0]), from_hex(parts[1])))
        except ValueError as exc:
            raise ParseError(str(exc), path=str(path), line=line_no) from exc
    return accesses


def load_symbol_map(path) -> SymbolMap:
    entries: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            pc = from_hex(obj["pc"])
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad sidecar entry: {exc}", path=str(path), line=line_no) from exc
        if pc in entries:
            warnings.warn(f"duplicate sidecar entry for PC {to_hex(pc)}; last one wins", DuplicatePcWarning)
        entries[pc] = {
            "function_name": str(obj.get("function_name", "")),
            "assembly_code": str(obj.get("assembly_code", "")),
            "function_code": str(obj.get("function_code", "")),
        }
    return SymbolMap(entries)


def enrich(records: list, symbols: SymbolMap) -> list:
    """Fill the three context fields on every record whose PC is known.

    In-place and idempotent; PCs absent from the map get empty strings.
    Returns the same list for chaining.
    """
    for record in records:
        context = symbols.get(record.program_counter)
        record.function_name = context["function_name"]
        record.assembly_code = context["assembly_code"]
        record.function_code = context["function_code"]
    return records
