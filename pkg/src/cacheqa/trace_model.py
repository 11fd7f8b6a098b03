"""Typed, queryable store of eviction-annotated cache access traces.

On disk a store is one directory per trace bundle:

    <store>/<workload>_evictions_<policy>/
        records.jsonl      one access record per line, stable field order
        metadata.txt       one-line whole-trace performance summary
        description.txt    human-readable workload + policy summary

Addresses and program counters are 64-bit unsigned integers in memory and
``0x``-prefixed lowercase hex strings on disk.  Optional numeric fields
(first-touch recency, never-reused forward distances) serialize as JSON
null, never as sentinel numbers.  The textual recency/reuse columns of the
record schema are rendered views of the numeric fields and are not stored;
see `docs/formats.md` for the field-by-field reference.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from cacheqa.errors import CacheQAError


class InvalidKey(CacheQAError):
    """Workload or policy identifier violates the key naming rules."""


class StoreIoError(CacheQAError):
    """Underlying filesystem failure while saving or loading a store."""


class FormatError(CacheQAError):
    """Corrupt or inconsistent on-disk data, with file position attached."""

    def __init__(self, message: str, *, path: str = "", line: int = 0, offset: int = 0):
        self.path = path
        self.line = line
        self.offset = offset
        where = f"{path}:{line}" if line else path
        if offset:
            where += f" (byte offset {offset})"
        super().__init__(f"{message} [{where}]" if where else message)


_IDENT_RE = re.compile(r"^[a-z0-9_]+$")
KEY_INFIX = "_evictions_"


def _check_ident(name: str, what: str) -> None:
    if not name or not _IDENT_RE.match(name):
        raise InvalidKey(f"{what} must be a non-empty lowercase [a-z0-9_] identifier, got {name!r}")
    if KEY_INFIX in name:
        raise InvalidKey(f"{what} must not contain the reserved infix {KEY_INFIX!r}: {name!r}")


@dataclass(frozen=True)
class TraceKey:
    """Identity of one trace bundle, rendered as `<workload>_evictions_<policy>`."""

    workload: str
    policy: str

    def __post_init__(self):
        _check_ident(self.workload, "workload")
        _check_ident(self.policy, "policy")

    @property
    def canonical_id(self) -> str:
        return f"{self.workload}{KEY_INFIX}{self.policy}"

    @classmethod
    def parse(cls, text: str) -> "TraceKey":
        workload, sep, policy = text.partition(KEY_INFIX)
        if not sep:
            raise InvalidKey(f"not a trace key (missing {KEY_INFIX!r}): {text!r}")
        return cls(workload, policy)

    def __str__(self) -> str:
        return self.canonical_id


class Outcome(str, Enum):
    """Access outcome as it appears in the record table."""

    HIT = "Cache Hit"
    MISS = "Cache Miss"


class MissType(str, Enum):
    NONE = "None"
    COMPULSORY = "Compulsory"
    CAPACITY = "Capacity"
    CONFLICT = "Conflict"


def to_hex(value: int) -> str:
    return f"0x{value:x}"


def from_hex(text: str) -> int:
    try:
        value = int(text, 16)
    except (TypeError, ValueError):
        raise ValueError(f"not a hex address: {text!r}")
    if value < 0:
        raise ValueError(f"addresses are unsigned: {text!r}")
    return value


@dataclass
class AccessRecord:
    """One annotated last-level-cache access.

    `current_cache_lines`, `recent_access_history` and
    `cache_line_eviction_scores` are snapshots of the state the access
    observed, i.e. before its own insertion/eviction took effect.  Snapshot
    pairs are (pc, address); score pairs are (address, score).
    """

    program_counter: int
    memory_address: int
    cache_set_id: int
    evict: Outcome
    miss_type: MissType
    evicted_address: Optional[int] = None
    accessed_address_recency_numeric: Optional[int] = None
    accessed_address_reuse_distance_numeric: Optional[int] = None
    evicted_address_reuse_distance_numeric: Optional[int] = None
    function_name: str = ""
    function_code: str = ""
    assembly_code: str = ""
    current_cache_lines: list = field(default_factory=list)
    recent_access_history: list = field(default_factory=list)
    cache_line_eviction_scores: list = field(default_factory=list)
    current_cache_line_addresses: list = field(default_factory=list)
    extensions: dict = field(default_factory=dict)

    @property
    def is_miss(self) -> int:
        return 1 if self.evict is Outcome.MISS else 0

    @property
    def accessed_address_recency(self) -> str:
        n = self.accessed_address_recency_numeric
        return "first access" if n is None else f"last accessed {n} accesses ago"

    @property
    def accessed_address_reuse_distance(self) -> str:
        n = self.accessed_address_reuse_distance_numeric
        return "never needed again" if n is None else f"needed again in {n} accesses"

    @property
    def evicted_address_reuse_distance(self) -> str:
        if self.evicted_address is None:
            return ""
        n = self.evicted_address_reuse_distance_numeric
        return "never needed again" if n is None else f"needed again in {n} accesses"


# Columns of the record table as exposed to filters, the query DSL and the
# CSV exporter.  Values are getters over AccessRecord.
COLUMNS = {
    "program_counter": lambda r: r.program_counter,
    "memory_address": lambda r: r.memory_address,
    "cache_set_id": lambda r: r.cache_set_id,
    "evict": lambda r: r.evict.value,
    "miss_type": lambda r: r.miss_type.value,
    "evicted_address": lambda r: r.evicted_address,
    "accessed_address_recency": lambda r: r.accessed_address_recency,
    "accessed_address_reuse_distance": lambda r: r.accessed_address_reuse_distance,
    "evicted_address_reuse_distance": lambda r: r.evicted_address_reuse_distance,
    "function_name": lambda r: r.function_name,
    "function_code": lambda r: r.function_code,
    "assembly_code": lambda r: r.assembly_code,
    "current_cache_lines": lambda r: r.current_cache_lines,
    "recent_access_history": lambda r: r.recent_access_history,
    "cache_line_eviction_scores": lambda r: r.cache_line_eviction_scores,
    "current_cache_line_addresses": lambda r: r.current_cache_line_addresses,
    "evicted_address_reuse_distance_numeric": lambda r: r.evicted_address_reuse_distance_numeric,
    "accessed_address_reuse_distance_numeric": lambda r: r.accessed_address_reuse_distance_numeric,
    "accessed_address_recency_numeric": lambda r: r.accessed_address_recency_numeric,
    "is_miss": lambda r: r.is_miss,
}

# Wire order of records.jsonl objects.  Textual reuse/recency views are not
# written; they re-render from the numeric fields on load.
_WIRE_FIELDS = (
    "program_counter",
    "memory_address",
    "cache_set_id",
    "evict",
    "miss_type",
    "evicted_address",
    "accessed_address_recency_numeric",
    "accessed_address_reuse_distance_numeric",
    "evicted_address_reuse_distance_numeric",
    "function_name",
    "function_code",
    "assembly_code",
    "current_cache_lines",
    "recent_access_history",
    "cache_line_eviction_scores",
    "current_cache_line_addresses",
    "is_miss",
)


def _opt_hex(value: Optional[int]) -> Optional[str]:
    return None if value is None else to_hex(value)


def record_to_obj(record: AccessRecord) -> dict:
    obj = {
        "program_counter": to_hex(record.program_counter),
        "memory_address": to_hex(record.memory_address),
        "cache_set_id": record.cache_set_id,
        "evict": record.evict.value,
        "miss_type": record.miss_type.value,
        "evicted_address": _opt_hex(record.evicted_address),
        "accessed_address_recency_numeric": record.accessed_address_recency_numeric,
        "accessed_address_reuse_distance_numeric": record.accessed_address_reuse_distance_numeric,
        "evicted_address_reuse_distance_numeric": record.evicted_address_reuse_distance_numeric,
        "function_name": record.function_name,
        "function_code": record.function_code,
        "assembly_code": record.assembly_code,
        "current_cache_lines": [[to_hex(pc), to_hex(addr)] for pc, addr in record.current_cache_lines],
        "recent_access_history": [[to_hex(pc), to_hex(addr)] for pc, addr in record.recent_access_history],
        "cache_line_eviction_scores": [[to_hex(addr), score] for addr, score in record.cache_line_eviction_scores],
        "current_cache_line_addresses": [to_hex(a) for a in record.current_cache_line_addresses],
        "is_miss": record.is_miss,
    }
    for key in sorted(record.extensions):
        obj[key] = record.extensions[key]
    return obj


def record_from_obj(obj: dict) -> AccessRecord:
    try:
        evict = Outcome(obj["evict"])
        record = AccessRecord(
            program_counter=from_hex(obj["program_counter"]),
            memory_address=from_hex(obj["memory_address"]),
            cache_set_id=int(obj["cache_set_id"]),
            evict=evict,
            miss_type=MissType(obj["miss_type"]),
            evicted_address=None if obj.get("evicted_address") is None else from_hex(obj["evicted_address"]),
            accessed_address_recency_numeric=obj.get("accessed_address_recency_numeric"),
            accessed_address_reuse_distance_numeric=obj.get("accessed_address_reuse_distance_numeric"),
            evicted_address_reuse_distance_numeric=obj.get("evicted_address_reuse_distance_numeric"),
            function_name=obj.get("function_name", ""),
            function_code=obj.get("function_code", ""),
            assembly_code=obj.get("assembly_code", ""),
            current_cache_lines=[(from_hex(pc), from_hex(a)) for pc, a in obj.get("current_cache_lines", [])],
            recent_access_history=[(from_hex(pc), from_hex(a)) for pc, a in obj.get("recent_access_history", [])],
            cache_line_eviction_scores=[(from_hex(a), int(s)) for a, s in obj.get("cache_line_eviction_scores", [])],
            current_cache_line_addresses=[from_hex(a) for a in obj.get("current_cache_line_addresses", [])],
            extensions={k: v for k, v in obj.items() if k not in _WIRE_FIELDS},
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"bad record object: {exc}") from exc
    if "is_miss" in obj and int(obj["is_miss"]) != record.is_miss:
        raise ValueError(f"is_miss={obj['is_miss']} inconsistent with evict={record.evict.value}")
    return record


@dataclass
class TraceBundle:
    """One workload x policy trace: ordered records plus summary texts."""

    key: TraceKey
    records: list
    metadata: str
    description: str

    _pair_index: Optional[dict] = field(default=None, repr=False, compare=False)

    def pair_index(self) -> dict:
        """Lazy (pc, address) -> [row indices] index for exact-match lookups."""
        if self._pair_index is None:
            index: dict = {}
            for i, record in enumerate(self.records):
                index.setdefault((record.program_counter, record.memory_address), []).append(i)
            self._pair_index = index
        return self._pair_index


class TraceStore:
    """Keyed collection of trace bundles.

    Immutable once built/loaded; `put_bundle` is the build-time mutation and
    returns the store for chaining.  Concurrent readers are safe.
    """

    def __init__(self, bundles: Iterable[TraceBundle] = ()):
        self._bundles: dict[str, TraceBundle] = {}
        for bundle in bundles:
            self.put_bundle(bundle)

    def put_bundle(self, bundle: TraceBundle) -> "TraceStore":
        key = bundle.key  # construction already validated identifiers
        self._bundles[key.canonical_id] = bundle
        return self

    def __len__(self) -> int:
        return len(self._bundles)

    def __contains__(self, canonical_id: str) -> bool:
        return canonical_id in self._bundles

    def __getitem__(self, canonical_id: str) -> TraceBundle:
        return self._bundles[canonical_id]

    def get(self, workload: str, policy: str) -> Optional[TraceBundle]:
        return self._bundles.get(f"{workload}{KEY_INFIX}{policy}")

    def keys(self) -> list:
        return sorted(self._bundles)

    def bundles(self) -> list:
        return [self._bundles[k] for k in self.keys()]

    def workloads(self) -> list:
        return sorted({b.key.workload for b in self._bundles.values()})

    def policies(self) -> list:
        return sorted({b.key.policy for b in self._bundles.values()})

    def bundles_for_workload(self, workload: str) -> list:
        return [b for b in self.bundles() if b.key.workload == workload]


def slice_records(records: list, filters) -> list:
    """Return exactly the records matching all present filter fields.

    `filters` needs `pcs`, `addresses`, `set_ids` (lists) and `outcome`
    attributes; absent/empty fields do not constrain.  Order is preserved
    and an empty result is a valid outcome.
    """
    out = records
    pcs = set(getattr(filters, "pcs", ()) or ())
    if pcs:
        out = [r for r in out if r.program_counter in pcs]
    addresses = set(getattr(filters, "addresses", ()) or ())
    if addresses:
        out = [r for r in out if r.memory_address in addresses]
    set_ids = set(getattr(filters, "set_ids", ()) or ())
    if set_ids:
        out = [r for r in out if r.cache_set_id in set_ids]
    outcome = getattr(filters, "outcome", None)
    if outcome is not None:
        out = [r for r in out if r.evict is outcome]
    return list(out)


_RECORDS_FILE = "records.jsonl"
_METADATA_FILE = "metadata.txt"
_DESCRIPTION_FILE = "description.txt"


def save_bundle(bundle: TraceBundle, store_dir) -> Path:
    root = Path(store_dir) / bundle.key.canonical_id
    try:
        root.mkdir(parents=True, exist_ok=True)
        with open(root / _RECORDS_FILE, "w", encoding="utf-8") as fh:
            for record in bundle.records:
                fh.write(json.dumps(record_to_obj(record)) + "\n")
        (root / _METADATA_FILE).write_text(bundle.metadata + "\n", encoding="utf-8")
        (root / _DESCRIPTION_FILE).write_text(bundle.description + "\n", encoding="utf-8")
    except OSError as exc:
        raise StoreIoError(f"cannot write bundle {bundle.key}: {exc}") from exc
    return root


def load_bundle(bundle_dir) -> TraceBundle:
    root = Path(bundle_dir)
    key = TraceKey.parse(root.name)
    path = root / _RECORDS_FILE
    records = []
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StoreIoError(f"cannot read {path}: {exc}") from exc
    offset = 0
    for line_no, raw in enumerate(data.split(b"\n"), start=1):
        line = raw.decode("utf-8", errors="replace").strip()
        if line:
            try:
                records.append(record_from_obj(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise FormatError(
                    f"malformed JSON: {exc.msg}",
                    path=str(path), line=line_no, offset=offset + exc.pos,
                ) from exc
            except ValueError as exc:
                raise FormatError(str(exc), path=str(path), line=line_no, offset=offset) from exc
        offset += len(raw) + 1
    try:
        metadata = (root / _METADATA_FILE).read_text(encoding="utf-8").strip()
        description = (root / _DESCRIPTION_FILE).read_text(encoding="utf-8").strip()
    except OSError as exc:
        raise StoreIoError(f"incomplete bundle directory {root}: {exc}") from exc
    return TraceBundle(key=key, records=records, metadata=metadata, description=description)


def save(store: TraceStore, path) -> None:
    """Persist every bundle under `path`, one directory per bundle."""
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StoreIoError(f"cannot create store directory {root}: {exc}") from exc
    for bundle in store.bundles():
        save_bundle(bundle, root)


def load(path) -> TraceStore:
    """Load every bundle directory found under `path`."""
    root = Path(path)
    if not root.is_dir():
        raise StoreIoError(f"not a store directory: {root}")
    store = TraceStore()
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / _RECORDS_FILE).exists():
            store.put_bundle(load_bundle(child))
    return store


# CSV export column order follows the record-table schema listing, textual
# views included, for interoperability with dataframe tooling.
_CSV_COLUMNS = (
    "program_counter",
    "memory_address",
    "cache_set_id",
    "evict",
    "miss_type",
    "evicted_address",
    "accessed_address_recency",
    "accessed_address_reuse_distance",
    "evicted_address_reuse_distance",
    "function_name",
    "function_code",
    "assembly_code",
    "current_cache_lines",
    "recent_access_history",
    "cache_line_eviction_scores",
    "current_cache_line_addresses",
    "evicted_address_reuse_distance_numeric",
    "accessed_address_reuse_distance_numeric",
    "accessed_address_recency_numeric",
    "is_miss",
)


def export_csv(bundle: TraceBundle, path) -> None:
    def cell(record, column):
        value = COLUMNS[column](record)
        if column in ("program_counter", "memory_address"):
            return to_hex(value)
        if column == "evicted_address":
            return "" if value is None else to_hex(value)
        if isinstance(value, list):
            obj = record_to_obj(record)
            return json.dumps(obj[column])
        return "" if value is None else value

    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for record in bundle.records:
                writer.writerow([cell(record, c) for c in _CSV_COLUMNS])
    except OSError as exc:
        raise StoreIoError(f"cannot write CSV {path}: {exc}") from exc
