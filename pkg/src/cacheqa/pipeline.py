"""End-to-end question answering: retriever dispatch plus grounded generation.

Shared by the CLI, the HTTP service and the benchmark runner.  In "auto"
mode the filter-based retriever runs first; if the question lacks anchors,
no single bundle can be pinned down, or the excerpt comes back empty, the
model-driven retriever takes over.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from cacheqa import ranger, sieve
from cacheqa.generator import AnswerResult, ConversationMemory, ModelClient, answer
from cacheqa.trace_model import TraceStore

RETRIEVERS = ("sieve", "ranger", "auto")


@dataclass
class PipelineResult:
    answer: str
    evidence: str
    provenance: dict
    retriever_used: str
    attempts: int
    prompt: str


def run_question(
    store: TraceStore,
    question: str,
    client: ModelClient,
    retriever: str = "auto",
    retriever_client: Optional[ModelClient] = None,
    shots: int = 0,
    memory: Optional[ConversationMemory] = None,
    excerpt_cap: int = sieve.DEFAULT_EXCERPT_CAP,
    max_retries: int = 3,
) -> PipelineResult:
    """Answer one question through the chosen retriever and the generator.

    `client` answers; `retriever_client` (defaulting to `client`) writes the
    query programs when the model-driven retriever runs.
    """
    if retriever not in RETRIEVERS:
        raise ValueError(f"retriever must be one of {RETRIEVERS}, got {retriever!r}")
    memory = memory if memory is not None else ConversationMemory()

    def run_sieve() -> Optional[PipelineResult]:
        filters = sieve.parse_query(question, store.workloads(), store.policies())
        if retriever == "auto" and not filters.anchored():
            return None
        try:
            context = sieve.retrieve(store, filters, excerpt_cap=excerpt_cap)
        except (sieve.BundleNotFound, sieve.AmbiguousBundle):
            if retriever == "auto":
                return None
            raise
        if retriever == "auto" and not context.trace_excerpt:
            return None
        result = answer(question, context, memory, client, shots=shots)
        return PipelineResult(
            answer=result.text,
            evidence=sieve.render_context(context),
            provenance=result.provenance,
            retriever_used="sieve",
            attempts=1,
            prompt=result.prompt,
        )

    def run_ranger() -> PipelineResult:
        outcome = ranger.retrieve(
            question, retriever_client or client, store, max_retries=max_retries
        )
        result = answer(question, outcome, memory, client, shots=shots)
        return PipelineResult(
            answer=result.text,
            evidence=outcome.result,
            provenance=result.provenance,
            retriever_used="ranger",
            attempts=outcome.attempts,
            prompt=result.prompt,
        )

    if retriever == "sieve":
        result = run_sieve()
        assert result is not None  # non-auto sieve either answers or raises
        return result
    if retriever == "auto":
        result = run_sieve()
        if result is not None:
            return result
    return run_ranger()
