"""Command-line surface: one subcommand per pipeline stage.

    simulate        replay a trace file under a policy into a store dir
    ingest          validate a trace file and print its shape
    enrich          attach a symbol sidecar to a stored bundle
    stats           per-PC / per-set analyses over one bundle
    query           one-shot question answering with provenance
    chat            interactive session over one conversation memory
    bench           run a question suite and write report files
    make-questions  generate a verified question suite from a store
    make-store      build the bundled demo store (3 workloads x 4 policies)
    serve           HTTP service over a store

Configuration precedence: flags > environment (CACHEQA_STORE,
CACHEQA_BASE_URL, CACHEQA_MODEL, CACHEQA_API_KEY) > --config JSON file.
Module errors exit non-zero with a one-line JSON payload on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from cacheqa import __version__, bench, ingest, question_gen, stats, trace_model
from cacheqa.errors import CacheQAError
from cacheqa.generator import (
    ConversationMemory,
    GroundedEchoClient,
    HttpChatClient,
    TemplateProgramClient,
)
from cacheqa.pipeline import RETRIEVERS, run_question
from cacheqa.simulator import CacheConfig, PolicySpec, simulate
from cacheqa.trace_model import to_hex

ENV_STORE = "CACHEQA_STORE"

CLIENT_CHOICES = ("mock", "live")


def _load_config(path) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _resolve_store(args, config) -> str:
    store = args.store or os.environ.get(ENV_STORE) or config.get("store")
    if not store:
        raise CacheQAError(f"no store given: pass --store, set {ENV_STORE}, or put 'store' in --config")
    return store


def _build_clients(name: str):
    """(answer client, program-writing client) for --client mock|live."""
    if name == "mock":
        return GroundedEchoClient(), TemplateProgramClient()
    client = HttpChatClient()
    return client, client


def _parse_policy(args) -> PolicySpec:
    if args.policy == "bypass_lru":
        if not args.bypass_pcs:
            raise CacheQAError("--policy bypass_lru requires --bypass-pcs 0x...,0x...")
        pcs = {int(token, 16) for token in args.bypass_pcs.split(",") if token}
        return PolicySpec.bypass_lru(pcs)
    if args.policy == "random":
        return PolicySpec.rand(seed=args.seed)
    if args.policy == "scored_stub":
        return PolicySpec.scored_stub(seed=args.seed)
    return PolicySpec(args.policy)


def cmd_simulate(args, config) -> int:
    trace = ingest.parse_trace_file(args.trace)
    cache_config = CacheConfig(
        num_sets=args.sets,
        ways=args.ways,
        line_size_bytes=args.line_bytes,
        history_depth=args.history,
    )
    bundle = simulate(
        trace,
        cache_config,
        _parse_policy(args),
        workload=args.workload,
        fold_compulsory=args.fold_compulsory,
    )
    if args.symbols:
        ingest.enrich(bundle.records, ingest.load_symbol_map(args.symbols))
    trace_model.save_bundle(bundle, args.out)
    if args.csv:
        trace_model.export_csv(bundle, args.csv)
    print(bundle.key.canonical_id)
    print(bundle.metadata)
    return 0


def cmd_ingest(args, config) -> int:
    trace = ingest.parse_trace_file(args.trace)
    pcs = {pc for pc, _ in trace}
    addresses = {addr for _, addr in trace}
    shape = {"accesses": len(trace), "unique_pcs": len(pcs), "unique_addresses": len(addresses)}
    if args.symbols:
        symbols = ingest.load_symbol_map(args.symbols)
        shape["symbols"] = len(symbols)
        shape["pcs_with_symbols"] = sum(1 for pc in pcs if pc in symbols.entries)
    print(json.dumps(shape, indent=2))
    return 0


def cmd_enrich(args, config) -> int:
    store_dir = Path(_resolve_store(args, config))
    bundle = trace_model.load_bundle(store_dir / args.key)
    ingest.enrich(bundle.records, ingest.load_symbol_map(args.symbols))
    trace_model.save_bundle(bundle, store_dir)
    print(f"enriched {args.key}: {len(bundle.records)} records")
    return 0


def cmd_stats(args, config) -> int:
    store = trace_model.load(_resolve_store(args, config))
    if args.key not in store:
        raise CacheQAError(f"unknown trace key {args.key!r}; available: {', '.join(store.keys())}")
    records = store[args.key].records
    out = {}
    if args.pc:
        st = stats.pc_stats(records, int(args.pc, 16))
        out["pc_stats"] = {
            "pc": to_hex(st.pc),
            "accesses": st.accesses,
            "hits": st.hits,
            "misses": st.misses,
            "miss_rate_pct": round(st.miss_rate, 2),
            "mean_accessed_reuse_distance": st.mean_accessed_reuse_distance,
            "std_accessed_reuse_distance": st.std_accessed_reuse_distance,
            "mean_evicted_reuse_distance": st.mean_evicted_reuse_distance,
            "eviction_count": st.eviction_count,
            "wrong_eviction_pct": round(st.wrong_eviction_pct, 2),
        }
    if args.hot_sets:
        hotness = stats.set_hotness(records, k=args.hot_sets, min_accesses=args.min_accesses)
        out["set_hotness"] = {"hot": hotness.hot, "cold": hotness.cold}
    if args.bypass_candidates:
        ranked = stats.bypass_candidates(records, max_candidates=args.bypass_candidates)
        out["bypass_candidates"] = [
            {"pc": to_hex(pc), "reason": reason} for pc, _, reason in ranked
        ]
    if args.variance_groups:
        groups = stats.group_pcs_by_reuse_variance(records)
        out["variance_groups"] = {
            "low": sorted(to_hex(pc) for pc in groups.low),
            "medium": sorted(to_hex(pc) for pc in groups.medium),
            "high": sorted(to_hex(pc) for pc in groups.high),
            "unclassified": sorted(to_hex(pc) for pc in groups.unclassified),
        }
    if args.top_miss:
        pc, count, rate = stats.top_miss_pc(records)
        out["top_miss_pc"] = {"pc": to_hex(pc), "misses": count, "miss_rate_pct": round(rate, 2)}
    if not out:
        raise CacheQAError("nothing to do: pass --pc, --hot-sets, --bypass-candidates, --variance-groups or --top-miss")
    print(json.dumps(out, indent=2))
    return 0


def cmd_query(args, config) -> int:
    store = trace_model.load(_resolve_store(args, config))
    client, program_client = _build_clients(args.client)
    result = run_question(
        store,
        args.question,
        client,
        retriever=args.retriever,
        retriever_client=program_client,
        shots=args.shots,
    )
    print(result.answer)
    print(f"provenance: {json.dumps(result.provenance, sort_keys=True)}")
    if args.show_evidence:
        print("--- evidence ---")
        print(result.evidence)
    return 0


def cmd_chat(args, config) -> int:
    store = trace_model.load(_resolve_store(args, config))
    client, program_client = _build_clients(args.client)
    memory = ConversationMemory()
    print(f"cacheqa chat over {len(store)} traces; 'exit' to leave")
    while True:
        try:
            line = input("you> ").strip()
        except EOFError:
            print()
            return 0
        if not line:
            continue
        if line in ("exit", "quit"):
            return 0
        try:
            result = run_question(
                store,
                line,
                client,
                retriever=args.retriever,
                retriever_client=program_client,
                shots=args.shots,
                memory=memory,
            )
        except CacheQAError as exc:
            print(f"error: {exc}")
            continue
        print(f"assistant> {result.answer}")
        print(f"  [{result.retriever_used}] {json.dumps(result.provenance, sort_keys=True)}")


def _build_judge(spec: str):
    if spec == "overlap":
        return bench.TokenOverlapJudge()
    if spec.startswith("scorefile:"):
        return bench.ScoreFileJudge(spec.split(":", 1)[1])
    if spec == "model":
        return bench.ModelJudge(HttpChatClient())
    raise CacheQAError(f"unknown judge {spec!r}; use overlap, scorefile:PATH or model")


def cmd_bench(args, config) -> int:
    store = trace_model.load(_resolve_store(args, config))
    suite = bench.load_questions(args.questions)
    client, program_client = _build_clients(args.client)
    report = bench.run_bench(
        store,
        suite,
        client,
        retriever=args.retriever,
        retriever_client=program_client,
        shots=args.shots,
        judge=_build_judge(args.judge),
    )
    print(report.render_text())
    if args.out:
        paths = bench.write_report_files(report, args.out)
        print(json.dumps(paths, indent=2))
    return 0


def cmd_make_questions(args, config) -> int:
    store = trace_model.load(_resolve_store(args, config))
    questions = question_gen.make_question_suite(store, seed=args.seed)
    bench.save_questions(questions, args.out)
    print(f"wrote {len(questions)} questions to {args.out}")
    return 0


def cmd_make_store(args, config) -> int:
    from cacheqa.fixtures import build_fixture_store

    store = build_fixture_store()
    trace_model.save(store, args.out)
    print(f"wrote {len(store)} bundles to {args.out}")
    for key in store.keys():
        print(f"  {key}")
    return 0


def cmd_serve(args, config) -> int:
    import uvicorn

    from cacheqa.service import create_app

    store = trace_model.load(_resolve_store(args, config))
    client, program_client = _build_clients(args.client)
    app = create_app(
        store,
        client=client,
        retriever_client=program_client,
        frontend_dir=args.frontend,
    )
    if args.frontend:
        print(f"UI: http://{args.host}:{args.port}/ui/")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _add_store_arg(parser):
    parser.add_argument("--store", help=f"store directory (default: ${ENV_STORE})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cacheqa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cacheqa {__version__}")
    parser.add_argument("--config", help="JSON config file (lowest precedence)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay a trace file into an annotated bundle")
    p.add_argument("--trace", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--policy", required=True, choices=("lru", "belady", "random", "bypass_lru", "scored_stub"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bypass-pcs", help="comma-separated hex PCs for bypass_lru")
    p.add_argument("--sets", type=int, default=2048)
    p.add_argument("--ways", type=int, default=16)
    p.add_argument("--line-bytes", type=int, default=64)
    p.add_argument("--history", type=int, default=8)
    p.add_argument("--symbols", help="JSONL symbol sidecar")
    p.add_argument("--fold-compulsory", action="store_true",
                   help="fold compulsory misses into the capacity bucket of the metadata string")
    p.add_argument("--out", required=True, help="store directory to write the bundle into")
    p.add_argument("--csv", help="also export the record table as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="validate a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--symbols")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("enrich", help="attach symbols to a stored bundle")
    _add_store_arg(p)
    p.add_argument("--key", required=True)
    p.add_argument("--symbols", required=True)
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("stats", help="analyses over one bundle")
    _add_store_arg(p)
    p.add_argument("--key", required=True)
    p.add_argument("--pc")
    p.add_argument("--hot-sets", type=int)
    p.add_argument("--min-accesses", type=int, default=16)
    p.add_argument("--bypass-candidates", type=int)
    p.add_argument("--variance-groups", action="store_true")
    p.add_argument("--top-miss", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("query", help="answer one question")
    _add_store_arg(p)
    p.add_argument("--retriever", default="auto", choices=RETRIEVERS)
    p.add_argument("--client", default="mock", choices=CLIENT_CHOICES)
    p.add_argument("--shots", type=int, default=0)
    p.add_argument("--show-evidence", action="store_true")
    p.add_argument("question")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("chat", help="interactive session")
    _add_store_arg(p)
    p.add_argument("--retriever", default="auto", choices=RETRIEVERS)
    p.add_argument("--client", default="mock", choices=CLIENT_CHOICES)
    p.add_argument("--shots", type=int, default=0)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("bench", help="run a question suite")
    _add_store_arg(p)
    p.add_argument("--questions", required=True)
    p.add_argument("--retriever", default="sieve", choices=RETRIEVERS)
    p.add_argument("--client", default="mock", choices=CLIENT_CHOICES)
    p.add_argument("--shots", type=int, default=0)
    p.add_argument("--judge", default="overlap", help="overlap | scorefile:PATH | model")
    p.add_argument("--out", help="directory for report.json/csv/txt")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-questions", help="generate a verified suite from a store")
    _add_store_arg(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_questions)

    p = sub.add_parser("make-store", help="build the bundled demo store")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_store)

    p = sub.add_parser("serve", help="run the HTTP service")
    _add_store_arg(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--client", default="mock", choices=CLIENT_CHOICES)
    p.add_argument("--frontend", help="built UI directory to serve at /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except CacheQAError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
