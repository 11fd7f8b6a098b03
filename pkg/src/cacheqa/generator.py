"""Grounded answer synthesis: prompt assembly over retrieved evidence,
conversation memory (sliding buffer + rolling summary + re-retrievable fact
index), and a pluggable chat-model client.

The prompt layout is fixed and byte-stable for identical inputs:
system text, conversation summary, recalled facts, evidence, few-shot
examples, question.  Memory contribution is capped by a character budget
(about 4 characters per token).

Clients: ScriptedClient / FileScriptedClient replay canned completions;
GroundedEchoClient answers by copying the matching sentence out of the
evidence section (the reference mock for loss-free pipeline checks);
TemplateProgramClient writes query-language programs from templated
questions so the model-driven retriever runs fully offline;
HttpChatClient speaks a chat-completions JSON wire format configured by
CACHEQA_BASE_URL / CACHEQA_MODEL / CACHEQA_API_KEY.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import requests

from cacheqa.errors import CacheQAError
from cacheqa.sieve import NOT_FOUND_SENTINEL, ContextBundle, render_context
from cacheqa.trace_model import to_hex


class ClientError(CacheQAError):
    """Transport or model failure inside a model client."""


class ModelClient:
    """Chat capability, with optional embeddings."""

    supports_embedding = False

    def chat(self, messages: list) -> str:
        raise NotImplementedError

    def embed(self, text: str) -> list:
        raise ClientError(f"{type(self).__name__} does not support embeddings")


class ScriptedClient(ModelClient):
    """Replays canned completions in order (deterministic tests/demos)."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls: list = []

    def chat(self, messages: list) -> str:
        self.calls.append([dict(m) for m in messages])
        if not self.responses:
            raise ClientError("scripted client has no responses left")
        return self.responses.pop(0)


class FileScriptedClient(ScriptedClient):
    """Reads scripted completions from a JSONL fixture: {"response": "..."}."""

    def __init__(self, path):
        responses = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                responses.append(json.loads(line)["response"])
        super().__init__(responses)


_TOKEN_RE = re.compile(r"[a-z0-9_]+")


def _tokens(text: str) -> frozenset:
    return frozenset(_TOKEN_RE.findall(text.lower()))


def token_overlap(a: str, b: str) -> float:
    """Jaccard overlap of lowercase word tokens."""
    ta, tb = _tokens(a), _tokens(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def _cosine(a: list, b: list) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = sum(x * x for x in a) ** 0.5
    nb = sum(y * y for y in b) ** 0.5
    return dot / (na * nb) if na and nb else 0.0


@dataclass
class ChatTurn:
    role: str
    text: str
    provenance: Optional[dict] = None

    def __post_init__(self):
        if self.role not in ("user", "assistant", "system"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.text:
            raise ValueError("turn text must be non-empty")


@dataclass
class Fact:
    text: str
    signature: object
    index: int


DEFAULT_BUFFER_TURNS = 8
DEFAULT_CHAR_BUDGET = 2048  # ~512 tokens at 4 chars/token


class ConversationMemory:
    """Sliding buffer of recent turns, rolling summary of evicted ones, and a
    fact index re-ranked per query (embeddings when the client has them,
    token overlap otherwise; ties go to the more recent fact)."""

    def __init__(
        self,
        buffer_turns: int = DEFAULT_BUFFER_TURNS,
        char_budget: int = DEFAULT_CHAR_BUDGET,
        embedder: Optional[Callable] = None,
        summarizer: Optional[Callable] = None,
    ):
        self.buffer: list = []
        self.buffer_turns = buffer_turns
        self.char_budget = char_budget
        self.summary = ""
        self.facts: list = []
        self.embedder = embedder
        self.summarizer = summarizer

    def append(self, turn: ChatTurn) -> None:
        if len(self.buffer) >= self.buffer_turns:
            evicted = self.buffer.pop(0)
            self._fold_into_summary(evicted)
        self.buffer.append(turn)
        signature = self.embedder(turn.text) if self.embedder else _tokens(turn.text)
        self.facts.append(Fact(text=turn.text, signature=signature, index=len(self.facts)))

    def _fold_into_summary(self, turn: ChatTurn) -> None:
        if self.summarizer:
            self.summary = self.summarizer(self.summary, turn)
            return
        if not self.summary:
            self.summary = "Earlier turns (truncated):"
        self.summary += f" [{turn.role}] {turn.text[:120]}"
        if len(self.summary) > self.char_budget:
            self.summary = self.summary[: self.char_budget]

    def recall(self, query: str, k: int = 3) -> list:
        """Top-k (text, score) facts for the query; empty memory recalls nothing."""
        if not self.facts:
            return []
        if self.embedder:
            query_sig = self.embedder(query)
            scored = [(_cosine(query_sig, f.signature), f) for f in self.facts]
        else:
            query_tokens = _tokens(query)
            scored = []
            for f in self.facts:
                union = query_tokens | f.signature
                score = len(query_tokens & f.signature) / len(union) if union else 0.0
                scored.append((score, f))
        scored.sort(key=lambda pair: (-pair[0], -pair[1].index))
        return [(f.text, score) for score, f in scored[:k] if score > 0.0]


# Few-shot context/response pairs in the same shape the live prompt uses.
EXEMPLARS = (
    (
        "For policy lru on workload demo at PC 0x40a1c9 and address 0x47ea85d3700:\n"
        "Cache result: Cache Miss\n"
        "Evicted address: 0x19e02d19b00 (needed again in 1804 accesses), "
        "Inserted address needed again in 2512 accesses.\n"
        "Answer the following question: Does the memory access with PC 0x40a1c9 "
        "and address 0x47ea85d3700 result in a cache hit or cache miss for the "
        "demo workload and lru replacement policy? The correct answer is,",
        "Cache Miss",
    ),
    (
        "For policy belady on workload demo at PC 0x40b2d1 and address 0x52c11f08d40:\n"
        "Cache result: Cache Hit\n"
        "Answer the following question: Does the memory access with PC 0x40b2d1 "
        "and address 0x52c11f08d40 result in a cache hit or cache miss for the "
        "demo workload and belady replacement policy? The correct answer is,",
        "Cache Hit",
    ),
    (
        "PC 0x40c3e2 appears 13 times in this trace (10 hits, 3 misses).\n"
        "The miss rate for PC 0x40c3e2 is 23.08%.\n"
        "Answer the following question: What is the miss rate for PC 0x40c3e2 "
        "in the demo workload under lru? The correct answer is,",
        "The miss rate for PC 0x40c3e2 is 23.08%.",
    ),
)

DEFAULT_SYSTEM = (
    "You are a cache replacement analysis assistant. Ground every claim in "
    "the evidence supplied with the question; quote its numbers exactly. If "
    "the evidence does not support the question's premise, say so explicitly "
    "instead of guessing. Be concise."
)


@dataclass
class AnswerResult:
    text: str
    provenance: dict
    prompt: str


def _evidence_text(evidence) -> tuple:
    if isinstance(evidence, ContextBundle):
        return render_context(evidence), evidence.provenance
    if hasattr(evidence, "result") and hasattr(evidence, "program"):  # RangerOutcome
        from cacheqa.ranger.dsl import pretty_print

        text = f"{evidence.result}\n(Executed query program: {pretty_print(evidence.program)})"
        return text, evidence.provenance
    if isinstance(evidence, str):
        return evidence, {}
    raise TypeError(f"unsupported evidence type {type(evidence).__name__}")


def build_prompt(question: str, evidence_text: str, memory: ConversationMemory, shots: int = 0) -> str:
    """Fixed section order: summary, recalled facts, evidence, examples, question."""
    sections = []
    if memory.summary:
        sections.append("## Conversation summary\n" + memory.summary[: memory.char_budget])
    recalled = memory.recall(question)
    if recalled:
        block = "\n".join(f"- {text}" for text, _ in recalled)
        sections.append("## Recalled facts\n" + block[: memory.char_budget])
    sections.append("## Evidence\n" + evidence_text)
    if shots > 0:
        count = 1 if shots == 1 else min(3, len(EXEMPLARS))
        examples = []
        for context, response in EXEMPLARS[:count]:
            examples.append(f"Context:\n{context}\nResponse: {response}")
        sections.append("## Examples\n" + "\n\n".join(examples))
    sections.append("## Question\n" + question)
    return "\n\n".join(sections)


def answer(
    question: str,
    evidence,
    memory: ConversationMemory,
    client: ModelClient,
    shots: int = 0,
    system_text: str = DEFAULT_SYSTEM,
) -> AnswerResult:
    """Ask the client for a grounded answer; memory mutates only on success."""
    text, provenance = _evidence_text(evidence)
    prompt = build_prompt(question, text, memory, shots=shots)
    messages = [
        {"role": "system", "content": system_text},
        {"role": "user", "content": prompt},
    ]
    reply = client.chat(messages)  # ClientError propagates, memory untouched
    memory.append(ChatTurn(role="user", text=question, provenance=provenance))
    memory.append(ChatTurn(role="assistant", text=reply, provenance=provenance))
    return AnswerResult(text=reply, provenance=provenance, prompt=prompt)


# --- deterministic offline clients ------------------------------------------

_REJECTION_TEXT = (
    "That premise does not hold: the requested PC/address combination does "
    "not appear in this trace, so no verdict can be given."
)

_HEX_RE = re.compile(r"0x[0-9a-fA-F]+")


def _question_hexes(question: str) -> tuple:
    pcs, addresses = [], []
    for token in _HEX_RE.findall(question):
        (pcs if len(token) - 2 <= 8 else addresses).append(token.lower())
    return pcs, addresses


class GroundedEchoClient(ModelClient):
    """Answers by extracting the matching sentence from the evidence section.

    By construction it can only emit text present in the evidence, which
    makes it the reference client for checking that the pipeline loses no
    information between retrieval and scoring.
    """

    def chat(self, messages: list) -> str:
        prompt = messages[-1]["content"]
        evidence = self._section(prompt, "Evidence")
        question = self._section(prompt, "Question") or prompt
        return self._answer(question, evidence)

    @staticmethod
    def _section(prompt: str, name: str) -> str:
        match = re.search(rf"## {name}\n(.*?)(?:\n## |\Z)", prompt, re.DOTALL)
        return match.group(1).strip() if match else ""

    def _answer(self, question: str, evidence: str) -> str:
        q = question.lower()
        pcs, addresses = _question_hexes(question)
        pc = pcs[0] if pcs else None

        if "hit" in q and "miss" in q and "miss rate" not in q:
            verdict = re.search(r"Cache result: (Cache (?:Hit|Miss))", evidence)
            return verdict.group(1) if verdict else _REJECTION_TEXT
        if "miss rate" in q:
            if pc:
                sentence = re.search(rf"The miss rate for PC {pc} is [0-9.]+%\.", evidence)
                if sentence:
                    return sentence.group(0)
            overall = re.search(r"([0-9.]+)% miss rate", evidence)
            if overall:
                return f"The miss rate is {overall.group(1)}%."
            return _REJECTION_TEXT
        if "how many" in q or "count" in q:
            if pc:
                sentence = re.search(rf"PC {pc} appears (\d+) times", evidence)
                if sentence:
                    return f"PC {pc} appears {sentence.group(1)} times."
            return _REJECTION_TEXT
        if "average" in q or "mean" in q:
            kind = "evicted" if "evicted" in q else "accessed"
            if pc:
                sentence = re.search(
                    rf"The mean {kind} reuse distance for PC {pc} is [0-9.]+ accesses\.", evidence
                )
                if sentence:
                    return sentence.group(0)
            return _REJECTION_TEXT
        if "does" in q and "access" in q:
            if NOT_FOUND_SENTINEL in evidence or not evidence:
                return _REJECTION_TEXT
            line = evidence.splitlines()[0]
            return f"Yes. {line}"
        for line in evidence.splitlines():
            if line and not line.startswith("---"):
                return line
        return _REJECTION_TEXT


class TemplateProgramClient(ModelClient):
    """Writes query-language programs from templated questions.

    Reads the available trace keys out of the system prompt, picks the
    workload/policy named in the question, and emits the program shape the
    question calls for; on retry feedback it falls back to echoing the
    trace metadata.  Deterministic, for offline runs of the model-driven
    retriever.
    """

    def chat(self, messages: list) -> str:
        system = messages[0]["content"]
        question = next(m["content"] for m in reversed(messages) if m["role"] == "user")
        keys = re.findall(r"^\s{2}([a-z0-9_]+)_evictions_([a-z0-9_]+)$", system, re.MULTILINE)
        if not keys:
            raise ClientError("system prompt lists no trace keys")
        workload, policy = self._pick_key(question, keys)
        if "failed" in question or "matched nothing" in question:
            return (
                f'from metadata {workload}/{policy} | '
                f'metadata_extract "(Cache Performance Summary.*)" | emit "{{0}}"'
            )
        return self._program(question, workload, policy)

    @staticmethod
    def _pick_key(question: str, keys: list) -> tuple:
        tokens = set(_TOKEN_RE.findall(question.lower()))
        workloads = sorted({w for w, _ in keys})
        policies = sorted({p for _, p in keys})
        workload = next((w for w in workloads if w in tokens), workloads[0])
        policy = next((p for p in policies if p in tokens), None)
        if policy is None:
            policy = next((p for w, p in sorted(keys) if w == workload), policies[0])
        return workload, policy

    def _program(self, question: str, workload: str, policy: str) -> str:
        q = question.lower()
        pcs, addresses = _question_hexes(question)
        source = f"from {workload}/{policy}"
        filters = ""
        if pcs:
            filters += f" | filter program_counter = {pcs[0]}"
        if addresses:
            filters += f" | filter memory_address = {addresses[0]}"
        if "hit" in q and "miss" in q and "miss rate" not in q and (pcs or addresses):
            return f'{source}{filters} | aggregate first evict | emit "Cache result: {{0}}"'
        if "miss rate" in q:
            if pcs:
                return (
                    f"{source}{filters} | aggregate rate_pct is_miss | "
                    f'emit "The miss rate for PC {pcs[0]} is {{0}}%."'
                )
            return (
                f'from metadata {workload}/{policy} | metadata_extract "([0-9.]+)% miss rate" | '
                f'emit "The miss rate is {{0}}%."'
            )
        if ("how many" in q or "count" in q) and pcs:
            return f'{source}{filters} | aggregate count | emit "PC {pcs[0]} appears {{0}} times."'
        if "average" in q or "mean" in q:
            column = (
                "evicted_address_reuse_distance_numeric"
                if "evicted" in q
                else "accessed_address_reuse_distance_numeric"
            )
            kind = "evicted" if "evicted" in q else "accessed"
            if pcs:
                return (
                    f"{source}{filters} | aggregate mean {column} | "
                    f'emit "The mean {kind} reuse distance for PC {pcs[0]} is {{0}} accesses."'
                )
        if "unique" in q and ("pc" in q or "pcs" in q):
            return (
                f"{source} | group_by program_counter | aggregate count | sort key asc | "
                f'emit "Unique PCs with access counts: {{0}}"'
            )
        if "does" in q and "access" in q and pcs and addresses:
            return (
                f"{source}{filters} | aggregate count | "
                f'emit "Yes: PC {pcs[0]} accesses address {addresses[0]} {{0}} times in this trace."'
            )
        return (
            f'from metadata {workload}/{policy} | '
            f'metadata_extract "(Cache Performance Summary.*)" | emit "{{0}}"'
        )


ENV_BASE_URL = "CACHEQA_BASE_URL"
ENV_MODEL = "CACHEQA_MODEL"
ENV_API_KEY = "CACHEQA_API_KEY"


class HttpChatClient(ModelClient):
    """Chat-completions wire format over HTTP.

    POST {base_url}/chat/completions with {"model", "messages"}; reads
    choices[0].message.content.  Embeddings, when the backend offers them,
    use POST {base_url}/embeddings.
    """

    supports_embedding = True

    def __init__(
        self,
        base_url: Optional[str] = None,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout
        if not self.base_url or not self.model:
            raise ClientError(
                f"model endpoint not configured; set {ENV_BASE_URL} and {ENV_MODEL}"
            )

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = requests.post(
                f"{self.base_url}{path}", json=payload, headers=self._headers(), timeout=self.timeout
            )
            response.raise_for_status()
            return response.json()
        except requests.RequestException as exc:
            raise ClientError(f"model endpoint failure: {exc}") from exc

    def chat(self, messages: list) -> str:
        data = self._post("/chat/completions", {"model": self.model, "messages": messages})
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed completion response: {data!r}") from exc

    def embed(self, text: str) -> list:
        data = self._post("/embeddings", {"model": self.model, "input": text})
        try:
            return list(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed embedding response: {data!r}") from exc
