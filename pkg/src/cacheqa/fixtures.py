"""Deterministic synthetic workloads for tests, demos and the shipped
question suite.

Three workloads with distinct locality shapes, each simulated under four
policies (lru, belady, random, scored_stub), giving a 12-bundle demo store:

  * scanloop - a small hot loop interleaved with a long one-shot scan;
  * chaser   - seeded pointer chasing over a skewed working set;
  * blend    - a resident working set polluted by a pure streaming PC
               (built so bypassing the stream PC strictly helps LRU).

PCs are 6 hex digits and data addresses 11 hex digits, line-aligned,
matching the widths the retriever's token classifier expects.
"""

from __future__ import annotations

import random

from cacheqa.ingest import SymbolMap, enrich
from cacheqa.simulator import CacheConfig, PolicySpec, simulate
from cacheqa.trace_model import TraceStore

FIXTURE_CONFIG = CacheConfig(num_sets=16, ways=2, line_size_bytes=64, history_depth=8)

FIXTURE_POLICIES = (
    PolicySpec.lru(),
    PolicySpec.belady(),
    PolicySpec.rand(seed=13),
    PolicySpec.scored_stub(seed=5),
)

LINE = 64

# PCs per workload (loads at distinct code addresses)
PC_SCAN_HOT = 0x401120
PC_SCAN_STREAM = 0x401210
PC_SCAN_HEADER = 0x401305
PC_SCAN_TAIL = 0x401407
PC_CHASE_WALK = 0x402150
PC_CHASE_ROOT = 0x402240
PC_CHASE_HASH = 0x402338
PC_BLEND_HOT = 0x403110
PC_BLEND_STREAM = 0x403270
PC_BLEND_MIX = 0x403330
PC_BLEND_HEADER = 0x403440

_SCAN_BASE = 0x2A9E6A40000
_SCAN_STREAM_BASE = 0x2B100000000
_CHASE_BASE = 0x2C919830000
_BLEND_BASE = 0x35E798A0000
_BLEND_STREAM_BASE = 0x36200000000

WORKLOAD_DESCRIPTIONS = {
    "scanloop": (
        "Synthetic kernel alternating a small hot loop over 8 cache lines "
        "with a long single-pass scan; the scan lines are never revisited."
    ),
    "chaser": (
        "Synthetic pointer-chasing kernel walking a 64-line pool with a "
        "skewed revisit distribution and periodic root reloads."
    ),
    "blend": (
        "Synthetic mix of a resident 24-line working set and an endless "
        "streaming PC whose lines are dead on arrival."
    ),
}


def scanloop_trace(cycles: int = 80) -> list:
    """Hot loop of 8 lines, a stream access every other hot access, a header
    reload each cycle, and a 4-line tail buffer walked once per cycle."""
    hot = [_SCAN_BASE + i * LINE for i in range(8)]
    tail = [_SCAN_BASE + 0x6000 + i * LINE for i in range(4)]
    trace = []
    stream_i = 0
    for c in range(cycles):
        trace.append((PC_SCAN_HEADER, _SCAN_BASE + 0x8000))
        for i, addr in enumerate(hot):
            trace.append((PC_SCAN_HOT, addr))
            if i % 2 == 1:
                trace.append((PC_SCAN_STREAM, _SCAN_STREAM_BASE + stream_i * LINE))
                stream_i += 1
        trace.append((PC_SCAN_TAIL, tail[c % len(tail)]))
    return trace


def chaser_trace(length: int = 1200, seed: int = 101) -> list:
    """Seeded walk over 64 lines, revisits skewed towards a 12-line core."""
    rng = random.Random(seed)
    pool = [_CHASE_BASE + i * LINE for i in range(64)]
    core = pool[:12]
    buckets = [_CHASE_BASE + 0x8000 + i * LINE for i in range(8)]
    trace = []
    for i in range(length):
        if i % 40 == 0:
            trace.append((PC_CHASE_ROOT, _CHASE_BASE + 0x9000))
            continue
        if i % 9 == 4:
            trace.append((PC_CHASE_HASH, rng.choice(buckets)))
            continue
        if rng.random() < 0.7:
            trace.append((PC_CHASE_WALK, rng.choice(core)))
        else:
            trace.append((PC_CHASE_WALK, rng.choice(pool)))
    return trace


def blend_trace(cycles: int = 48, seed: int = 7) -> list:
    """Resident 24-line working set round-robined by one PC, polluted by a
    never-reused stream on another, plus a small seeded mixer."""
    rng = random.Random(seed)
    hot = [_BLEND_BASE + i * LINE for i in range(24)]
    mix = [_BLEND_BASE + 0x4000 + i * LINE for i in range(6)]
    trace = []
    stream_i = 0
    for _ in range(cycles):
        trace.append((PC_BLEND_HEADER, _BLEND_BASE + 0x9000))
        for i, addr in enumerate(hot):
            trace.append((PC_BLEND_HOT, addr))
            if i % 3 == 2:
                trace.append((PC_BLEND_STREAM, _BLEND_STREAM_BASE + stream_i * LINE))
                stream_i += 1
        trace.append((PC_BLEND_MIX, rng.choice(mix)))
    return trace


FIXTURE_TRACES = {
    "scanloop": scanloop_trace,
    "chaser": chaser_trace,
    "blend": blend_trace,
}

_ASM = {
    PC_SCAN_HOT: "401118: 8b 04 8a  mov (%rdx,%rcx,4),%eax\n401120: 01 c3     add %eax,%ebx",
    PC_SCAN_STREAM: "401208: 48 ff c6  inc %rsi\n401210: 8b 06     mov (%rsi),%eax",
    PC_SCAN_HEADER: "401300: 48 8b 3d  mov 0x2e41(%rip),%rdi\n401305: 8b 07     mov (%rdi),%eax",
    PC_SCAN_TAIL: "401400: 48 98     cltq\n401407: 8b 44 87 10  mov 0x10(%rdi,%rax,4),%eax",
    PC_CHASE_WALK: "402148: 48 8b 40 08  mov 0x8(%rax),%rax\n402150: 48 8b 00  mov (%rax),%rax",
    PC_CHASE_ROOT: "402238: 48 8b 05  mov 0x1b22(%rip),%rax\n402240: 8b 10     mov (%rax),%edx",
    PC_CHASE_HASH: "402330: 31 d2     xor %edx,%edx\n402338: 8b 0c 96  mov (%rsi,%rdx,4),%ecx",
    PC_BLEND_HOT: "403108: 8b 04 b8  mov (%rax,%rdi,4),%eax\n403110: 03 45 f8  add -0x8(%rbp),%eax",
    PC_BLEND_STREAM: "403268: 48 83 c1 40  add $0x40,%rcx\n403270: 8b 11     mov (%rcx),%edx",
    PC_BLEND_MIX: "403328: 48 63 d0  movslq %eax,%rdx\n403330: 8b 04 93  mov (%rbx,%rdx,4),%eax",
    PC_BLEND_HEADER: "403438: 48 8b 3d  mov 0x11c2(%rip),%rdi\n403440: 8b 47 08  mov 0x8(%rdi),%eax",
}

_SYMBOLS = {
    PC_SCAN_HOT: ("hot_loop_sum", "for (i = 0; i < 8; i++) acc += table[i];"),
    PC_SCAN_STREAM: ("stream_copy", "while (src < end) *dst++ = *src++;"),
    PC_SCAN_HEADER: ("read_header", "hdr = *shared_header;"),
    PC_SCAN_TAIL: ("drain_tail", "t = tail[c & 3];"),
    PC_CHASE_WALK: ("walk_list", "node = node->next; total += node->val;"),
    PC_CHASE_ROOT: ("reload_root", "node = list_root;"),
    PC_CHASE_HASH: ("probe_bucket", "b = table[hash(key) & 7];"),
    PC_BLEND_HOT: ("tile_accumulate", "acc += tile[idx];"),
    PC_BLEND_STREAM: ("flush_log", "log_write(cursor); cursor += STRIDE;"),
    PC_BLEND_MIX: ("sample_bucket", "v = buckets[h % NB];"),
    PC_BLEND_HEADER: ("load_frame_header", "frame = *frame_header;"),
}


def fixture_symbols() -> SymbolMap:
    entries = {
        pc: {
            "function_name": name,
            "assembly_code": _ASM[pc],
            "function_code": code,
        }
        for pc, (name, code) in _SYMBOLS.items()
    }
    return SymbolMap(entries)


def build_fixture_store() -> TraceStore:
    """Simulate every workload under every fixture policy; 12 enriched bundles."""
    symbols = fixture_symbols()
    store = TraceStore()
    for workload, make_trace in FIXTURE_TRACES.items():
        trace = make_trace()
        for policy in FIXTURE_POLICIES:
            bundle = simulate(
                trace,
                FIXTURE_CONFIG,
                policy,
                workload=workload,
                workload_description=WORKLOAD_DESCRIPTIONS[workload],
            )
            enrich(bundle.records, symbols)
            store.put_bundle(bundle)
    return store
