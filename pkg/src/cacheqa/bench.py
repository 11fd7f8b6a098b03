"""Two-tier benchmark harness.

Tier one (trace-grounded, 75 questions across six categories) scores binary
0/1 by exact-match verification: label answers must assert exactly one of
the allowed labels, numeric answers must contain a number within tolerance
(counts exact, rates within 0.05 percentage points), and trick questions
must reject the false premise without fabricating a verdict.

Tier two (reasoning and analysis, five categories of five) is rubric-graded
0-5 by a pluggable judge: a model judge prompted with the rubric, a score
file of recorded human grades, or a deterministic token-overlap judge for
offline runs.

Reports weight category scores by the question file's actual counts and
print the weight vector alongside the totals.
"""

from __future__ import annotations

import csv
import io
import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from cacheqa.errors import CacheQAError
from cacheqa.generator import ConversationMemory, ModelClient
from cacheqa.pipeline import run_question
from cacheqa.trace_model import TraceStore

TG_CATEGORIES = ("HitMiss", "MissRate", "PolicyComparison", "Count", "Arithmetic", "Trick")
ARA_CATEGORIES = (
    "MicroarchConcepts",
    "CodeGeneration",
    "PolicyAnalysis",
    "WorkloadAnalysis",
    "SemanticAnalysis",
)
TIERS = ("TG", "ARA")
ARA_MAX_SCORE = 5


class SchemaError(CacheQAError):
    """A question file entry violates the schema."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"{message} [line {line}]" if line else message)


class JudgeError(CacheQAError):
    """The rubric judge produced no usable score."""


EXPECTED_KINDS = ("label", "numeric", "trick", "rubric")

_KIND_BY_CATEGORY = {
    "HitMiss": "label",
    "MissRate": "numeric",
    "PolicyComparison": "label",
    "Count": "numeric",
    "Arithmetic": "numeric",
    "Trick": "trick",
    **{category: "rubric" for category in ARA_CATEGORIES},
}


@dataclass
class Expected:
    kind: str
    value: Optional[object] = None
    labels: tuple = ()
    tolerance: float = 0.0
    premise: str = ""
    reference: str = ""
    criteria: tuple = ()

    def to_obj(self) -> dict:
        obj = {"kind": self.kind}
        if self.kind == "label":
            obj["value"] = self.value
            obj["labels"] = list(self.labels)
        elif self.kind == "numeric":
            obj["value"] = self.value
            obj["tolerance"] = self.tolerance
        elif self.kind == "trick":
            obj["premise"] = self.premise
        else:
            obj["reference"] = self.reference
            obj["criteria"] = list(self.criteria)
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "Expected":
        kind = obj.get("kind")
        if kind not in EXPECTED_KINDS:
            raise ValueError(f"expected.kind must be one of {EXPECTED_KINDS}, got {kind!r}")
        return cls(
            kind=kind,
            value=obj.get("value"),
            labels=tuple(obj.get("labels", ())),
            tolerance=float(obj.get("tolerance", 0.0)),
            premise=obj.get("premise", ""),
            reference=obj.get("reference", ""),
            criteria=tuple(obj.get("criteria", ())),
        )


@dataclass
class BenchQuestion:
    id: str
    tier: str
    category: str
    text: str
    expected: Expected
    grounding: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.tier not in TIERS:
            raise ValueError(f"tier must be TG or ARA, got {self.tier!r}")
        if self.tier == "TG" and self.category not in TG_CATEGORIES:
            raise ValueError(f"TG category must be one of {TG_CATEGORIES}, got {self.category!r}")
        if self.tier == "ARA" and self.category not in ARA_CATEGORIES:
            raise ValueError(f"ARA category must be one of {ARA_CATEGORIES}, got {self.category!r}")
        want = _KIND_BY_CATEGORY[self.category]
        if self.expected.kind != want:
            raise ValueError(
                f"category {self.category} needs expected.kind={want!r}, got {self.expected.kind!r}"
            )
        if self.expected.kind == "label" and self.expected.value not in self.expected.labels:
            raise ValueError("label value must be one of the allowed labels")
        if self.expected.kind == "trick" and not self.expected.premise:
            raise ValueError("trick questions must describe the false premise")
        if not self.text:
            raise ValueError("question text must be non-empty")

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "tier": self.tier,
            "category": self.category,
            "text": self.text,
            "expected": self.expected.to_obj(),
            "grounding": self.grounding,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "BenchQuestion":
        question = cls(
            id=str(obj["id"]),
            tier=obj.get("tier", ""),
            category=obj.get("category", ""),
            text=obj.get("text", ""),
            expected=Expected.from_obj(obj.get("expected", {})),
            grounding=obj.get("grounding", {}),
        )
        question.validate()
        return question


@dataclass
class QuestionSuite:
    questions: list

    def category_counts(self) -> dict:
        counts: dict = {}
        for question in self.questions:
            counts[question.category] = counts.get(question.category, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self.questions)


def load_questions(path) -> QuestionSuite:
    """Load and validate a JSONL question file; empty files warn."""
    questions = []
    seen_ids = set()
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            question = BenchQuestion.from_obj(json.loads(line))
        except (json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
            raise SchemaError(str(exc), line=line_no) from exc
        if question.id in seen_ids:
            raise SchemaError(f"duplicate question id {question.id!r}", line=line_no)
        seen_ids.add(question.id)
        questions.append(question)
    if not questions:
        warnings.warn(f"question file {path} is empty", UserWarning)
    return QuestionSuite(questions)


def save_questions(questions: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for question in questions:
            fh.write(json.dumps(question.to_obj()) + "\n")


# --- trace-grounded scoring --------------------------------------------------

REJECTION_PATTERNS = (
    "does not appear",
    "not found",
    "no matching",
    "not present",
    "no record",
    "does not hold",
    "invalid premise",
    "false premise",
    "never accesses",
    "cannot verify",
)

_HEX_RE = re.compile(r"0x[0-9a-f]+")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower()).strip()


def asserted_label(answer: str, labels) -> Optional[str]:
    """The single allowed label the answer asserts, or None."""
    normalized = _normalize(answer)
    matched = [
        label
        for label in labels
        if re.search(rf"(?<![a-z0-9_]){re.escape(_normalize(label))}(?![a-z0-9_])", normalized)
    ]
    return matched[0] if len(matched) == 1 else None


def extract_numbers(answer: str) -> list:
    """Plain numbers in the answer, hex tokens folded out first."""
    return [float(n) for n in _NUMBER_RE.findall(_HEX_RE.sub(" ", _normalize(answer)))]


def score_tg(answer: str, expected: Expected, rejection_patterns=REJECTION_PATTERNS) -> int:
    """Binary exact-match verification for the trace-grounded tier."""
    if expected.kind == "label":
        return 1 if asserted_label(answer, expected.labels) == expected.value else 0
    if expected.kind == "numeric":
        target = float(expected.value)
        for number in extract_numbers(answer):
            if abs(number - target) <= expected.tolerance:
                return 1
        return 0
    if expected.kind == "trick":
        normalized = _normalize(answer)
        rejected = any(pattern in normalized for pattern in rejection_patterns)
        fabricated = asserted_label(answer, ("Cache Hit", "Cache Miss")) is not None
        return 1 if rejected and not fabricated else 0
    raise ValueError(f"score_tg cannot grade expected kind {expected.kind!r}")


# --- reasoning-tier judges ---------------------------------------------------


class ScoreFileJudge:
    """Reads pre-recorded integer scores keyed by question id."""

    def __init__(self, scores):
        if isinstance(scores, (str, Path)):
            scores = json.loads(Path(scores).read_text(encoding="utf-8"))
        self.scores = {str(k): int(v) for k, v in scores.items()}

    def __call__(self, question: BenchQuestion, answer: str):
        if question.id not in self.scores:
            raise JudgeError(f"no recorded score for question {question.id!r}")
        score = self.scores[question.id]
        if not 0 <= score <= ARA_MAX_SCORE:
            raise JudgeError(f"recorded score {score} out of range 0..{ARA_MAX_SCORE}")
        return score, f"score file: {score}"


_SCORE_RE = re.compile(r"score\s*[:=]?\s*([0-5])", re.IGNORECASE)


class ModelJudge:
    """Prompts a model client with the rubric and parses 'Score: N'."""

    def __init__(self, client: ModelClient):
        self.client = client

    def __call__(self, question: BenchQuestion, answer: str):
        criteria = ", ".join(question.expected.criteria) or "correctness, use of evidence, clarity"
        prompt = (
            f"Grade the answer on a 0-5 integer scale for {criteria}.\n"
            f"Question: {question.text}\n"
            f"Reference answer: {question.expected.reference}\n"
            f"Candidate answer: {answer}\n"
            f'Reply as "Score: N" followed by one sentence of justification.'
        )
        transcript = self.client.chat([{"role": "user", "content": prompt}])
        match = _SCORE_RE.search(transcript)
        if not match:
            raise JudgeError(f"judge reply carries no parseable score: {transcript!r}")
        return int(match.group(1)), transcript


class TokenOverlapJudge:
    """Deterministic offline judge: recall of reference tokens, scaled to 0-5."""

    def __call__(self, question: BenchQuestion, answer: str):
        reference = set(re.findall(r"[a-z0-9_]+", question.expected.reference.lower()))
        candidate = set(re.findall(r"[a-z0-9_]+", answer.lower()))
        if not reference:
            raise JudgeError(f"question {question.id!r} has an empty rubric reference")
        recall = len(reference & candidate) / len(reference)
        return round(ARA_MAX_SCORE * recall), f"token-overlap recall {recall:.2f}"


def score_ara(question: BenchQuestion, answer: str, judge):
    """(integer score 0..5, judge transcript); JudgeError propagates."""
    score, transcript = judge(question, answer)
    score = int(score)
    if not 0 <= score <= ARA_MAX_SCORE:
        raise JudgeError(f"judge score {score} out of range")
    return score, transcript


# --- report ------------------------------------------------------------------


def weighted_total(pairs) -> float:
    """Count-weighted mean of (percent, count) category scores."""
    total_weight = sum(count for _, count in pairs)
    if not total_weight:
        return 0.0
    return sum(pct * count for pct, count in pairs) / total_weight


@dataclass
class QuestionResult:
    id: str
    tier: str
    category: str
    score: Optional[float]
    answer: str
    error: str = ""
    retriever_used: str = ""
    judge_transcript: str = ""


@dataclass
class CategorySummary:
    tier: str
    count: int
    scored: int
    points: float
    max_points: float

    @property
    def pct(self) -> float:
        return 100.0 * self.points / self.max_points if self.max_points else 0.0


@dataclass
class BenchReport:
    results: list
    categories: dict
    weights: dict
    tg_total: float
    ara_total: float
    grand_total: float

    def to_obj(self) -> dict:
        return {
            "categories": {
                name: {
                    "tier": summary.tier,
                    "count": summary.count,
                    "scored": summary.scored,
                    "accuracy_pct": round(summary.pct, 2),
                }
                for name, summary in self.categories.items()
            },
            "weights": self.weights,
            "tg_total_pct": round(self.tg_total, 2),
            "ara_total_pct": round(self.ara_total, 2),
            "grand_total_pct": round(self.grand_total, 2),
            "results": [
                {
                    "id": r.id,
                    "tier": r.tier,
                    "category": r.category,
                    "score": r.score,
                    "answer": r.answer,
                    "error": r.error,
                    "retriever_used": r.retriever_used,
                }
                for r in self.results
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["category", "tier", "count", "scored", "accuracy_pct"])
        for name, summary in self.categories.items():
            writer.writerow([name, summary.tier, summary.count, summary.scored, f"{summary.pct:.2f}"])
        writer.writerow(["TG_TOTAL", "TG", self.weights.get("TG", 0), "", f"{self.tg_total:.2f}"])
        writer.writerow(["ARA_TOTAL", "ARA", self.weights.get("ARA", 0), "", f"{self.ara_total:.2f}"])
        writer.writerow(["GRAND_TOTAL", "", sum(s.count for s in self.categories.values()), "", f"{self.grand_total:.2f}"])
        return out.getvalue()

    def render_text(self) -> str:
        lines = [
            f"{'category':<20} {'tier':<4} {'count':>5} {'scored':>6} {'accuracy':>9}",
            "-" * 48,
        ]
        for name, summary in self.categories.items():
            lines.append(
                f"{name:<20} {summary.tier:<4} {summary.count:>5} {summary.scored:>6} {summary.pct:>8.2f}%"
            )
        lines.append("-" * 48)
        lines.append(f"weights: {json.dumps({k: v for k, v in self.weights.items() if k not in TIERS})}")
        lines.append(f"TG total: {self.tg_total:.2f}%   ARA total: {self.ara_total:.2f}%   grand: {self.grand_total:.2f}%")
        return "\n".join(lines)


def build_report(results: list, questions: list) -> BenchReport:
    categories: dict = {}
    order = [q.category for q in questions]
    seen = []
    for category in order:
        if category not in seen:
            seen.append(category)
    by_id = {q.id: q for q in questions}
    for category in seen:
        tier = "TG" if category in TG_CATEGORIES else "ARA"
        categories[category] = CategorySummary(tier=tier, count=0, scored=0, points=0.0, max_points=0.0)
    for result in results:
        summary = categories[result.category]
        summary.count += 1
        question = by_id[result.id]
        max_points = 1.0 if question.tier == "TG" else float(ARA_MAX_SCORE)
        summary.max_points += max_points
        if result.score is not None:
            summary.scored += 1
            summary.points += result.score
    tg_pairs = [(s.pct, s.count) for s in categories.values() if s.tier == "TG"]
    ara_pairs = [(s.pct, s.count) for s in categories.values() if s.tier == "ARA"]
    weights = {name: s.count for name, s in categories.items()}
    weights["TG"] = sum(count for _, count in tg_pairs)
    weights["ARA"] = sum(count for _, count in ara_pairs)
    return BenchReport(
        results=results,
        categories=categories,
        weights=weights,
        tg_total=weighted_total(tg_pairs),
        ara_total=weighted_total(ara_pairs),
        grand_total=weighted_total(tg_pairs + ara_pairs),
    )


def run_bench(
    store: TraceStore,
    suite: QuestionSuite,
    client: ModelClient,
    retriever: str = "sieve",
    retriever_client: Optional[ModelClient] = None,
    shots: int = 0,
    judge=None,
    excerpt_cap: int = 32,
    max_retries: int = 3,
) -> BenchReport:
    """Run every question end to end; per-question failures score 0 (TG) or
    stay unscored (ARA) and the run continues."""
    results = []
    for question in suite.questions:
        answer_text = ""
        error = ""
        retriever_used = ""
        score: Optional[float] = None
        try:
            outcome = run_question(
                store,
                question.text,
                client,
                retriever=retriever,
                retriever_client=retriever_client,
                shots=shots,
                memory=ConversationMemory(),
                excerpt_cap=excerpt_cap,
                max_retries=max_retries,
            )
            answer_text = outcome.answer
            retriever_used = outcome.retriever_used
        except CacheQAError as exc:
            error = f"{type(exc).__name__}: {exc}"
        transcript = ""
        if question.tier == "TG":
            score = float(score_tg(answer_text, question.expected)) if not error else 0.0
        elif not error:
            if judge is None:
                error = "JudgeError: no judge configured for the reasoning tier"
            else:
                try:
                    ara_score, transcript = score_ara(question, answer_text, judge)
                    score = float(ara_score)
                except JudgeError as exc:
                    error = f"JudgeError: {exc}"
        results.append(
            QuestionResult(
                id=question.id,
                tier=question.tier,
                category=question.category,
                score=score,
                answer=answer_text,
                error=error,
                retriever_used=retriever_used,
                judge_transcript=transcript,
            )
        )
    return build_report(results, suite.questions)


def write_report_files(report: BenchReport, out_dir) -> dict:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": root / "report.json",
        "csv": root / "report.csv",
        "txt": root / "report.txt",
    }
    paths["json"].write_text(report.to_json() + "\n", encoding="utf-8")
    paths["csv"].write_text(report.to_csv(), encoding="utf-8")
    paths["txt"].write_text(report.render_text() + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
