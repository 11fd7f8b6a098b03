import json

import pytest

from cacheqa.bench import (
    ARA_CATEGORIES,
    TG_CATEGORIES,
    BenchQuestion,
    Expected,
    JudgeError,
    ModelJudge,
    SchemaError,
    ScoreFileJudge,
    TokenOverlapJudge,
    asserted_label,
    build_report,
    load_questions,
    run_bench,
    save_questions,
    score_ara,
    score_tg,
    weighted_total,
    write_report_files,
    QuestionResult,
)
from cacheqa.generator import GroundedEchoClient, ScriptedClient, TemplateProgramClient
from cacheqa.question_gen import DEFAULT_TG_COUNTS, make_question_suite
from cacheqa.bench import QuestionSuite


@pytest.fixture(scope="module")
def suite(fixture_store):
    return QuestionSuite(make_question_suite(fixture_store, seed=0))


class TestScoreTg:
    def test_label_containment(self):
        expected = Expected(kind="label", value="Cache Miss", labels=("Cache Hit", "Cache Miss"))
        assert score_tg("...this access results in a Cache Miss.", expected) == 1
        assert score_tg("cache   MISS", expected) == 1
        assert score_tg("Cache Hit", expected) == 0
        # asserting both labels is not an answer
        assert score_tg("either a cache hit or a cache miss", expected) == 0
        assert score_tg("no idea", expected) == 0

    def test_count_is_exact(self):
        expected = Expected(kind="numeric", value=4, tolerance=0.0)
        assert score_tg("It appeared 5 times", expected) == 0
        assert score_tg("PC 0x405832 appears 4 times.", expected) == 1

    def test_rate_tolerance(self):
        expected = Expected(kind="numeric", value=44.69, tolerance=0.05)
        assert score_tg("The miss rate for PC 0x401e31 is 44.69%.", expected) == 1
        assert score_tg("roughly 44.71%", expected) == 1
        assert score_tg("roughly 44.80%", expected) == 0

    def test_hex_tokens_do_not_leak_numbers(self):
        expected = Expected(kind="numeric", value=401, tolerance=0.0)
        assert score_tg("PC 0x401e31 was involved", expected) == 0

    def test_trick_scoring(self):
        expected = Expected(kind="trick", premise="that pair never occurs")
        assert score_tg("Cache Miss", expected) == 0
        assert score_tg("That PC does not appear in this workload.", expected) == 1
        # rejection wording plus a confident verdict is still a failure
        assert score_tg("Not found, but I'd guess Cache Miss.", expected) == 0

    def test_asserted_label_is_word_bounded(self):
        assert asserted_label("blru is not a policy", ("lru", "belady")) is None
        assert asserted_label("belady wins", ("lru", "belady")) == "belady"


class TestScoreAra:
    def question(self):
        return BenchQuestion(
            id="ara-x",
            tier="ARA",
            category="PolicyAnalysis",
            text="why?",
            expected=Expected(kind="rubric", reference="because reuse distance", criteria=("correctness",)),
        )

    def test_score_file_judge_passthrough(self):
        judge = ScoreFileJudge({"ara-x": 4})
        assert score_ara(self.question(), "answer", judge) == (4, "score file: 4")

    def test_score_file_judge_missing_id(self):
        with pytest.raises(JudgeError):
            score_ara(self.question(), "answer", ScoreFileJudge({}))

    def test_model_judge_parses_score(self):
        judge = ModelJudge(ScriptedClient(["Score: 3 - partially grounded"]))
        score, transcript = score_ara(self.question(), "answer", judge)
        assert score == 3
        assert "partially grounded" in transcript

    def test_model_judge_unparseable(self):
        judge = ModelJudge(ScriptedClient(["that was fine I guess"]))
        with pytest.raises(JudgeError):
            score_ara(self.question(), "answer", judge)

    def test_token_overlap_judge_is_deterministic(self):
        judge = TokenOverlapJudge()
        score, _ = score_ara(self.question(), "because reuse distance", judge)
        assert score == 5
        low, _ = score_ara(self.question(), "unrelated words entirely", judge)
        assert low == 0


class TestWeightedTotals:
    def test_reported_sieve_total(self):
        pairs = list(zip((83.3, 90, 60, 0, 30, 80), (30, 10, 15, 5, 10, 5)))
        assert weighted_total(pairs) == pytest.approx(66.7, abs=0.1)

    def test_reported_ranger_total(self):
        pairs = list(zip((100, 100, 66.67, 100, 70, 100), (30, 10, 15, 5, 10, 5)))
        assert weighted_total(pairs) == pytest.approx(89.33, abs=0.1)

    def test_empty(self):
        assert weighted_total([]) == 0.0


class TestQuestionFile:
    def test_round_trip(self, suite, tmp_path):
        path = tmp_path / "questions.jsonl"
        save_questions(suite.questions, path)
        loaded = load_questions(path)
        assert [q.to_obj() for q in loaded.questions] == [q.to_obj() for q in suite.questions]

    def test_tier_category_mismatch_rejected(self, tmp_path):
        bad = {
            "id": "x",
            "tier": "TG",
            "category": "SemanticAnalysis",
            "text": "?",
            "expected": {"kind": "rubric", "reference": "r"},
        }
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(bad) + "\n")
        with pytest.raises(SchemaError) as err:
            load_questions(path)
        assert err.value.line == 1

    def test_empty_file_warns(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.warns(UserWarning):
            suite = load_questions(path)
        assert len(suite) == 0

    def test_duplicate_ids_rejected(self, suite, tmp_path):
        path = tmp_path / "dup.jsonl"
        obj = suite.questions[0].to_obj()
        path.write_text(json.dumps(obj) + "\n" + json.dumps(obj) + "\n")
        with pytest.raises(SchemaError):
            load_questions(path)


class TestSuiteGeneration:
    def test_mirrors_expected_shape(self, suite):
        counts = suite.category_counts()
        for category, want in DEFAULT_TG_COUNTS.items():
            assert counts[category] == want
        for category in ARA_CATEGORIES:
            assert counts[category] == 5
        assert len(suite) == 100

    def test_deterministic_given_seed(self, fixture_store):
        one = make_question_suite(fixture_store, seed=3)
        two = make_question_suite(fixture_store, seed=3)
        assert [q.to_obj() for q in one] == [q.to_obj() for q in two]

    def test_shipped_suite_is_current(self, fixture_store, tmp_path):
        # regenerating with the shipped seed must reproduce the shipped bytes
        from pathlib import Path

        shipped = Path(__file__).resolve().parent.parent / "questions" / "fixture_suite.jsonl"
        regenerated = tmp_path / "regen.jsonl"
        save_questions(make_question_suite(fixture_store, seed=0), regenerated)
        assert regenerated.read_bytes() == shipped.read_bytes()

    def test_expected_answers_verify_against_store(self, fixture_store, suite):
        for question in suite.questions:
            if question.category == "HitMiss":
                key = question.grounding["key"]
                pc = int(question.grounding["filters"]["pcs"][0], 16)
                address = int(question.grounding["filters"]["addresses"][0], 16)
                outcomes = {
                    r.evict.value
                    for r in fixture_store[key].records
                    if r.program_counter == pc and r.memory_address == address
                }
                assert outcomes == {question.expected.value}
            elif question.category == "Trick":
                key = question.grounding["key"]
                pc = int(question.grounding["filters"]["pcs"][0], 16)
                address = int(question.grounding["filters"]["addresses"][0], 16)
                assert not any(
                    r.program_counter == pc and r.memory_address == address
                    for r in fixture_store[key].records
                )


class TestRunBench:
    def test_echo_run_is_lossless_on_direct_categories(self, fixture_store, suite):
        report = run_bench(
            fixture_store,
            suite,
            GroundedEchoClient(),
            retriever="sieve",
            judge=TokenOverlapJudge(),
        )
        assert report.categories["HitMiss"].pct == pytest.approx(100.0)
        assert report.categories["MissRate"].pct == pytest.approx(100.0)
        assert report.categories["Count"].pct == pytest.approx(100.0)
        # weights reflect the actual question counts
        assert report.weights["HitMiss"] == 30
        assert report.weights["TG"] == 75
        assert report.weights["ARA"] == 25

    def test_report_totals_recompute(self, fixture_store, suite):
        report = run_bench(
            fixture_store, suite, GroundedEchoClient(), retriever="sieve", judge=TokenOverlapJudge()
        )
        tg_pairs = [(s.pct, s.count) for s in report.categories.values() if s.tier == "TG"]
        assert report.tg_total == pytest.approx(weighted_total(tg_pairs), abs=0.01)

    def test_failures_recorded_not_raised(self, fixture_store, suite):
        report = run_bench(fixture_store, suite, GroundedEchoClient(), retriever="sieve")
        # no ARA judge configured: reasoning questions are unscored, run continues
        ara_results = [r for r in report.results if r.tier == "ARA"]
        assert ara_results
        assert all(r.score is None and r.error for r in ara_results)
        assert any("JudgeError" in r.error for r in ara_results)

    def test_degenerate_empty_store_report_still_renders(self, suite):
        from cacheqa.trace_model import TraceStore

        report = run_bench(TraceStore(), suite, GroundedEchoClient(), retriever="sieve")
        assert report.tg_total == 0.0
        assert "GRAND_TOTAL" in report.to_csv()
        assert report.render_text()

    def test_deterministic_report_bytes(self, fixture_store, suite, tmp_path):
        kwargs = dict(retriever="sieve", judge=TokenOverlapJudge())
        one = run_bench(fixture_store, suite, GroundedEchoClient(), **kwargs)
        two = run_bench(fixture_store, suite, GroundedEchoClient(), **kwargs)
        assert one.to_json() == two.to_json()
        paths = write_report_files(one, tmp_path / "report")
        assert set(paths) == {"json", "csv", "txt"}

    def test_ranger_run_with_program_writer(self, fixture_store, suite):
        missrate = [q for q in suite.questions if q.category == "MissRate"][:3]
        counts = [q for q in suite.questions if q.category == "Count"][:3]
        small = QuestionSuite(missrate + counts)
        report = run_bench(
            fixture_store,
            small,
            GroundedEchoClient(),
            retriever="ranger",
            retriever_client=TemplateProgramClient(),
        )
        assert report.categories["MissRate"].pct == pytest.approx(100.0)
        assert report.categories["Count"].pct == pytest.approx(100.0)


class TestReportArithmetic:
    def test_build_report_invariants(self):
        questions = [
            BenchQuestion(
                id=f"q{i}",
                tier="TG",
                category="HitMiss",
                text="?",
                expected=Expected(kind="label", value="Cache Hit", labels=("Cache Hit", "Cache Miss")),
            )
            for i in range(4)
        ]
        results = [
            QuestionResult(id=f"q{i}", tier="TG", category="HitMiss", score=score, answer="")
            for i, score in enumerate((1.0, 1.0, 0.0, 1.0))
        ]
        report = build_report(results, questions)
        assert report.categories["HitMiss"].pct == pytest.approx(75.0)
        assert report.tg_total == pytest.approx(75.0)
        assert report.grand_total == pytest.approx(75.0)
