"""HTTP service over a read-only trace store: chat sessions, trace/stats
browsing, and benchmark runs.

All payloads are JSON with hex fields as 0x-prefixed strings.  Unknown
keys/sessions return 404, semantic violations 400 (framework body-shape
validation returns 422), and model-client failures 502 with a transcript
snippet.  Sessions live in memory, expire after an idle timeout, and handle
their messages serially; everything else is stateless over the store.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field as dataclass_field
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from cacheqa import bench as bench_mod
from cacheqa import stats as stats_mod
from cacheqa.errors import CacheQAError
from cacheqa.generator import (
    ClientError,
    ConversationMemory,
    GroundedEchoClient,
    ModelClient,
    TemplateProgramClient,
)
from cacheqa.pipeline import RETRIEVERS, run_question
from cacheqa.trace_model import TraceStore, to_hex

DEFAULT_IDLE_TIMEOUT = 3600.0


class SessionIn(BaseModel):
    retriever: str = "auto"
    shots: int = Field(default=0, ge=0, le=3)


class MessageIn(BaseModel):
    text: str = Field(min_length=1)


class BenchRunIn(BaseModel):
    questions_path: str
    retriever: str = "sieve"
    shots: int = Field(default=0, ge=0, le=3)


@dataclass
class SessionState:
    id: str
    retriever: str
    shots: int
    memory: ConversationMemory = dataclass_field(default_factory=ConversationMemory)
    last_active: float = dataclass_field(default_factory=time.monotonic)
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)


def _pc_stats_obj(st: stats_mod.PcStats) -> dict:
    return {
        "pc": to_hex(st.pc),
        "accesses": st.accesses,
        "hits": st.hits,
        "misses": st.misses,
        "miss_rate_pct": round(st.miss_rate, 2),
        "hit_rate_pct": round(st.hit_rate, 2),
        "mean_accessed_reuse_distance": st.mean_accessed_reuse_distance,
        "std_accessed_reuse_distance": st.std_accessed_reuse_distance,
        "mean_evicted_reuse_distance": st.mean_evicted_reuse_distance,
        "eviction_count": st.eviction_count,
        "wrong_evictions": st.wrong_evictions,
        "wrong_eviction_pct": round(st.wrong_eviction_pct, 2),
    }


def create_app(
    store: TraceStore,
    client: Optional[ModelClient] = None,
    retriever_client: Optional[ModelClient] = None,
    judge=None,
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
    frontend_dir: Optional[str] = None,
) -> FastAPI:
    """Build the app around a store and model clients.

    Defaults to the deterministic offline clients (evidence-echoing answerer,
    template program writer) so the service runs with no model endpoint.
    When `frontend_dir` points at a built UI, it is served at /ui on the
    same origin.
    """
    app = FastAPI(title="cacheqa", version="0.1.0")
    if frontend_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=frontend_dir, html=True), name="ui")
    answer_client = client or GroundedEchoClient()
    program_client = retriever_client or TemplateProgramClient()
    sessions: dict = {}
    sessions_lock = threading.Lock()
    bench_runs: dict = {}
    app.state.sessions = sessions  # test/debug introspection
    app.state.store = store

    def _purge_idle() -> None:
        now = time.monotonic()
        with sessions_lock:
            for sid in [s for s, state in sessions.items() if now - state.last_active > idle_timeout]:
                del sessions[sid]

    def _bundle_or_404(key: str):
        if key not in store:
            raise HTTPException(status_code=404, detail={"error": "KeyNotFound", "key": key})
        return store[key]

    @app.get("/health")
    def health():
        return {"status": "ok", "traces": len(store)}

    @app.get("/traces")
    def traces():
        return {
            "keys": store.keys(),
            "workloads": store.workloads(),
            "policies": store.policies(),
        }

    @app.get("/traces/{key}")
    def trace_detail(key: str):
        bundle = _bundle_or_404(key)
        return {
            "key": key,
            "records": len(bundle.records),
            "metadata": bundle.metadata,
            "description": bundle.description,
        }

    @app.get("/traces/{key}/stats")
    def trace_stats(key: str, pc: Optional[str] = None):
        bundle = _bundle_or_404(key)
        if pc is not None:
            try:
                pc_value = int(pc, 16)
            except ValueError:
                raise HTTPException(status_code=400, detail={"error": "BadPc", "pc": pc})
            try:
                return _pc_stats_obj(stats_mod.pc_stats(bundle.records, pc_value))
            except stats_mod.PcNotFound as exc:
                raise HTTPException(status_code=404, detail=exc.payload())
        pcs = sorted({r.program_counter for r in bundle.records})
        table = [_pc_stats_obj(stats_mod.pc_stats(bundle.records, p)) for p in pcs]
        table.sort(key=lambda row: (-row["miss_rate_pct"], row["pc"]))
        return {"key": key, "pcs": table}

    @app.get("/traces/{key}/sets")
    def trace_sets(key: str, k: int = 5, min_accesses: int = 16):
        bundle = _bundle_or_404(key)
        try:
            hotness = stats_mod.set_hotness(bundle.records, k=k, min_accesses=min_accesses)
        except (stats_mod.NotEnoughSets, ValueError) as exc:
            detail = exc.payload() if isinstance(exc, CacheQAError) else {"error": "BadRequest", "message": str(exc)}
            raise HTTPException(status_code=400, detail=detail)
        return {
            "key": key,
            "hot": hotness.hot,
            "cold": hotness.cold,
            "table": [
                {
                    "set_id": s.set_id,
                    "accesses": s.accesses,
                    "hits": s.hits,
                    "hit_rate_pct": round(s.hit_rate, 2),
                }
                for s in hotness.table
            ],
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionIn):
        if body.retriever not in RETRIEVERS:
            raise HTTPException(
                status_code=400,
                detail={"error": "BadRetriever", "allowed": list(RETRIEVERS)},
            )
        _purge_idle()
        state = SessionState(id=uuid.uuid4().hex, retriever=body.retriever, shots=body.shots)
        with sessions_lock:
            sessions[state.id] = state
        return {"session_id": state.id, "retriever": state.retriever, "shots": state.shots}

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageIn):
        _purge_idle()
        with sessions_lock:
            state = sessions.get(session_id)
        if state is None:
            raise HTTPException(status_code=404, detail={"error": "SessionNotFound", "session_id": session_id})
        with state.lock:
            state.last_active = time.monotonic()
            try:
                result = run_question(
                    store,
                    body.text,
                    answer_client,
                    retriever=state.retriever,
                    retriever_client=program_client,
                    shots=state.shots,
                    memory=state.memory,
                )
            except ClientError as exc:
                raise HTTPException(status_code=502, detail=exc.payload())
            except CacheQAError as exc:
                raise HTTPException(status_code=400, detail=exc.payload())
            state.last_active = time.monotonic()
        return {
            "answer": result.answer,
            "evidence": result.evidence,
            "provenance": result.provenance,
            "retriever_used": result.retriever_used,
            "attempts": result.attempts,
        }

    @app.post("/bench/runs", status_code=201)
    def start_bench_run(body: BenchRunIn):
        if body.retriever not in RETRIEVERS:
            raise HTTPException(
                status_code=400,
                detail={"error": "BadRetriever", "allowed": list(RETRIEVERS)},
            )
        try:
            suite = bench_mod.load_questions(body.questions_path)
        except (OSError, CacheQAError) as exc:
            detail = exc.payload() if isinstance(exc, CacheQAError) else {"error": "IoError", "message": str(exc)}
            raise HTTPException(status_code=400, detail=detail)
        try:
            report = bench_mod.run_bench(
                store,
                suite,
                answer_client,
                retriever=body.retriever,
                retriever_client=program_client,
                shots=body.shots,
                judge=judge or bench_mod.TokenOverlapJudge(),
            )
        except ClientError as exc:
            raise HTTPException(status_code=502, detail=exc.payload())
        run_id = uuid.uuid4().hex
        bench_runs[run_id] = report.to_obj()
        return {"run_id": run_id}

    @app.get("/bench/runs")
    def list_bench_runs():
        return {"runs": sorted(bench_runs)}

    @app.get("/bench/runs/{run_id}")
    def bench_run(run_id: str):
        if run_id not in bench_runs:
            raise HTTPException(status_code=404, detail={"error": "RunNotFound", "run_id": run_id})
        return bench_runs[run_id]

    return app
