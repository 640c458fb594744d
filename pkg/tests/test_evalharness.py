from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsinstruct.captioner import LlmClient, MockBackend
from rsinstruct.evalharness import (
    LlmJudge,
    PredictionError,
    RuleJudge,
    acc_at_iou,
    acc_eq1,
    acc_eq2,
    ciou_score,
    evaluate_run,
    f1_example_based,
    load_predictions,
    mae_numeric,
    matches,
    normalize_answer,
    parse_box,
    score_color,
    score_match_tasks,
)
from rsinstruct.hnstgen import HnstConfig, build_hnstd, scaled_targets
from rsinstruct.samples import InstructionSample, NONEXISTENCE_OPTION
from rsinstruct.variousgen import VariousConfig, build_various


def mk(sample_id, task, kind, question, answer, choices=None, image_id="img"):
    task_ids = {"presence": "IDK", "color": "IDK", "absolute_position": "IDK",
                "relative_position": "IDK", "counting": "IT", "modality": "IT",
                "resolution": "IT", "geometry": "IT", "vectorize": "IT",
                "multilabel": "IT", "scene": "CLS", "vqa": "VQA", "grounding": "VG"}
    return InstructionSample(
        sample_id=sample_id, image_id=image_id, task_id=task_ids[task],
        task_name=task, kind=kind, question=question, answer=answer,
        choices=tuple(choices) if choices else None,
    )


class TestNormalizeAnswer:
    def test_yes_with_period(self):
        assert normalize_answer("Yes.") == "yes"

    def test_option_letter_resolution(self):
        choices = ("top side", "center", "right side", "left side", NONEXISTENCE_OPTION)
        assert normalize_answer("(C) right side", choices) == "right side"
        assert normalize_answer("c", choices) == "right side"
        assert normalize_answer("C.", choices) == "right side"

    def test_letter_prefix_requires_delimiter(self):
        choices = ("above", "below", "center", "left", "right")
        assert normalize_answer("center", choices) == "center"

    def test_case_and_whitespace(self):
        assert normalize_answer("  CENTER ") == "center"
        assert normalize_answer("right   side") == "right side"

    def test_full_option_text_match(self):
        choices = ("above", "below", NONEXISTENCE_OPTION)
        out = normalize_answer("None of the above - the object is not present in the image.", choices)
        assert out == normalize_answer(NONEXISTENCE_OPTION)

    def test_mismatched_letter_text_not_resolved(self):
        # letter says "above" but text says "below": resolve neither
        choices = ("above", "below", "center", "left", "right")
        assert normalize_answer("(a) below", choices) == "(a) below"


class TestEquationAggregates:
    def test_eq1_identity(self):
        assert acc_eq1(1.0, 1.0) == 1.0

    def test_eq1_reference_values(self):
        assert acc_eq1(0.7679, 0.9067) == pytest.approx(0.8373, abs=1e-9)

    def test_eq1_symmetric(self):
        assert acc_eq1(0.3, 0.8) == acc_eq1(0.8, 0.3)

    def test_eq2_zero(self):
        assert acc_eq2(0.0, 0.0, 0.0) == 0.0

    def test_eq2_reference_values(self):
        assert acc_eq2(0.8150, 0.9333, 0.9300) == pytest.approx(0.873325, abs=1e-9)

    def test_eq2_identity(self):
        assert acc_eq2(1.0, 1.0, 1.0) == 1.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            acc_eq1(1.2, 0.5)
        with pytest.raises(ValueError):
            acc_eq2(0.5, -0.1, 0.5)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.1))
    @settings(max_examples=200)
    def test_monotone_and_bounded(self, a, b, c, delta):
        base = acc_eq2(a, b, c)
        assert 0.0 <= base <= 1.0
        bumped = min(1.0, c + delta)
        assert acc_eq2(a, b, bumped) >= base - 1e-12

    @given(st.floats(0, 0.9), st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=100)
    def test_eq2_pan_weight_is_quarter(self, a, b, c):
        delta = 0.05
        if c + delta > 1:
            return
        assert acc_eq2(a, b, c + delta) - acc_eq2(a, b, c) == pytest.approx(delta / 4, abs=1e-12)


class TestScoreMatchTasks:
    def dataset(self):
        return [
            mk("p1", "presence", "plain", "q", "Yes"),
            mk("p2", "presence", "plain", "q", "No"),
            mk("a1", "absolute_position", "factual", "q", "center",
               choices=("center", "top side", "left side", "right side", NONEXISTENCE_OPTION)),
            mk("a2", "absolute_position", "deceptive_ex", "q", NONEXISTENCE_OPTION,
               choices=("center", "top side", "left side", "right side", NONEXISTENCE_OPTION)),
        ]

    def test_gold_round_trip(self):
        data = self.dataset()
        preds = {s.sample_id: s.answer for s in data}
        out = score_match_tasks(data, preds)
        assert out["presence"]["acc"] == 1.0
        assert out["absolute_position"]["acc"] == 1.0

    def test_empty_predictions_all_wrong_with_warnings(self):
        data = self.dataset()
        out = score_match_tasks(data, {})
        assert out["presence"]["acc"] == 0.0
        assert out["presence"]["missing"] == 2
        assert out["absolute_position"]["acc"] == 0.0

    def test_eq1_application(self):
        data = self.dataset()
        preds = {"a1": "center", "a2": "center", "p1": "Yes", "p2": "Yes"}
        out = score_match_tasks(data, preds)
        assert out["absolute_position"]["acc_fact"] == 1.0
        assert out["absolute_position"]["acc_dec"] == 0.0
        assert out["absolute_position"]["acc"] == 0.5
        assert out["presence"]["acc"] == 0.5

    def test_order_independence(self):
        data = self.dataset()
        preds = {"p1": "yes", "a1": "(A) center", "p2": "no", "a2": "nope"}
        a = score_match_tasks(data, preds)
        b = score_match_tasks(list(reversed(data)), dict(reversed(list(preds.items()))))
        assert a == b

    def test_yes_leading_token(self):
        data = [mk("p1", "presence", "plain", "q", "Yes")]
        assert score_match_tasks(data, {"p1": "Yes, there is a ship."})["presence"]["acc"] == 1.0


class TestRuleJudge:
    def setup_method(self):
        self.judge = RuleJudge()
        self.ex = mk("d1", "color", "deceptive_ex", "q",
                     "There is no bridge in the image, so its color cannot be determined.")
        self.pan = mk("d2", "color", "deceptive_pan", "q",
                      "This is a panchromatic image, so the color of the plane cannot be determined from it.")

    def test_affirmative_color_wrong(self):
        assert self.judge.verdict(self.ex, "the bridge is blue") is False

    def test_refusal_correct(self):
        assert self.judge.verdict(self.ex, "I cannot answer: there is no bridge here.") is True

    def test_pan_keyword_rule(self):
        assert self.judge.verdict(self.pan, "color cannot be determined from this grayscale image") is True
        assert self.judge.verdict(self.pan, "it looks dark gray") is False

    def test_gold_answers_pass_their_own_judge(self):
        assert self.judge.verdict(self.ex, self.ex.answer) is True
        assert self.judge.verdict(self.pan, self.pan.answer) is True


class TestScoreColor:
    def dataset(self):
        return [
            mk("f1", "color", "factual", "q", "red"),
            mk("f2", "color", "factual", "q", "gray"),
            mk("d1", "color", "deceptive_ex", "q",
               "There is no bridge in the image, so its color cannot be determined."),
            mk("d2", "color", "deceptive_pan", "q",
               "This is a panchromatic image, so the color of the plane cannot be determined from it."),
        ]

    def test_gold_round_trip_eq2(self):
        data = self.dataset()
        preds = {s.sample_id: s.answer for s in data}
        out = score_color(data, preds, RuleJudge())["color"]
        assert out["acc_fact"] == 1.0
        assert out["acc_dec_ex"] == 1.0
        assert out["acc_dec_pan"] == 1.0
        assert out["acc"] == 1.0

    def test_synonym_table(self):
        data = self.dataset()
        preds = {"f1": "red", "f2": "grey", "d1": data[2].answer, "d2": data[3].answer}
        out = score_color(data, preds, RuleJudge())["color"]
        assert out["acc_fact"] == 1.0

    def test_failed_judge_marks_unscored(self):
        class DeadJudge:
            def verdict(self, sample, prediction):
                return None

        data = self.dataset()
        preds = {s.sample_id: s.answer for s in data}
        out = score_color(data, preds, DeadJudge())["color"]
        assert out["unscored"] == 2
        report = evaluate_run(data, preds, DeadJudge())
        assert report.incomplete

    def test_llm_judge_via_mock_backend(self, tmp_path):
        client = LlmClient(MockBackend(), rate=10**6, sleep=lambda s: None)
        judge = LlmJudge(client)
        data = self.dataset()
        assert judge.verdict(data[2], "whatever") is True  # mock always says correct


class TestAuxMetrics:
    def test_mae_identity(self):
        data = [mk("c1", "counting", "plain", "q", "3"), mk("c2", "counting", "plain", "q", "7")]
        out = mae_numeric(data, {"c1": "3", "c2": "7"})
        assert out["mae"] == 0.0

    def test_mae_with_text_wrapping(self):
        data = [mk("c1", "counting", "plain", "q", "3")]
        out = mae_numeric(data, {"c1": "There are 5 ships."})
        assert out["mae"] == 2.0

    def test_mae_unparseable_penalty(self):
        data = [mk("r1", "resolution", "plain", "q", "0.50")]
        out = mae_numeric(data, {"r1": "cannot tell"})
        assert out["mae"] == 0.5
        assert out["unparseable"] == 1
        out2 = mae_numeric(data, {"r1": "no clue"}, unparseable_penalty=9.0)
        assert out2["mae"] == 9.0

    def test_mae_geometry_two_values(self):
        data = [mk("g1", "geometry", "plain", "q", "length 50.0 m, width 20.0 m")]
        out = mae_numeric(data, {"g1": "length 40.0 m, width 30.0 m"}, value_count=2)
        assert out["mae"] == 10.0

    def test_acc_at_iou_threshold(self):
        data = [mk("v1", "grounding", "plain", "q", "[100,100,200,200]")]
        # a box with IoU just under 0.5 counts wrong
        assert acc_at_iou(data, {"v1": "[100,100,200,200]"})["acc"] == 1.0
        assert acc_at_iou(data, {"v1": "[150,100,250,200]"})["acc"] == 0.0  # IoU = 1/3
        assert acc_at_iou(data, {"v1": "not a box"})["unparseable"] == 1

    def test_parse_box_rejects_inverted(self):
        assert parse_box("[10, 5, 3, 20]") is None

    def test_ciou_identity(self):
        answer = "{(10,10),(50,10),(50,50),(10,50)}; {(100,100),(150,100),(150,150),(100,150)}"
        data = [mk("b1", "vectorize", "plain", "q", answer)]
        out = ciou_score(data, {"b1": answer})
        assert out["ciou"] == 1.0

    def test_ciou_unmatched_scores_zero(self):
        gold = "{(10,10),(50,10),(50,50),(10,50)}"
        pred = gold + "; {(500,500),(600,500),(600,600),(500,600)}"
        data = [mk("b1", "vectorize", "plain", "q", gold)]
        out = ciou_score(data, {"b1": pred})
        assert out["ciou"] == pytest.approx(0.5)

    def test_ciou_vertex_penalty(self):
        gold = "{(0,0),(100,0),(100,100),(0,100)}"
        pred = "{(0,0),(50,0),(100,0),(100,50),(100,100),(50,100),(0,100),(0,50)}"
        data = [mk("b1", "vectorize", "plain", "q", gold)]
        out = ciou_score(data, {"b1": pred})
        assert out["ciou"] == pytest.approx(2 / 3, abs=1e-9)

    def test_f1_half(self):
        data = [mk("m1", "multilabel", "plain", "q", "a, b")]
        out = f1_example_based(data, {"m1": "b, c"})
        assert out["f1"] == 0.5

    def test_f1_identity(self):
        data = [mk("m1", "multilabel", "plain", "q", "forest, water")]
        assert f1_example_based(data, {"m1": "water, forest"})["f1"] == 1.0


class TestLoadPredictions:
    def test_duplicates_rejected(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text('{"sample_id": "a", "output": "x"}\n{"sample_id": "a", "output": "y"}\n')
        with pytest.raises(PredictionError, match="duplicate"):
            load_predictions(path)

    def test_unknown_ids_rejected_at_evaluation(self):
        data = [mk("p1", "presence", "plain", "q", "Yes")]
        with pytest.raises(PredictionError, match="unknown"):
            evaluate_run(data, {"p1": "Yes", "ghost": "No"})


class TestEvaluateRun:
    def test_full_round_trip_all_ones(self, small_corpus, tmp_path):
        client = LlmClient(MockBackend(), rate=10**6, sleep=lambda s: None,
                           cache_dir=tmp_path / "c")
        hnst = build_hnstd(small_corpus, HnstConfig(targets=scaled_targets(0.004), seed=3), client)
        various = build_various(
            small_corpus,
            VariousConfig(targets={"counting": 30, "modality": 20, "resolution": 20,
                                   "geometry": 15, "vectorize": 15, "multilabel": 15,
                                   "scene": 15}, seed=3),
        )
        dataset = hnst.train + hnst.test + various.samples
        preds = {s.sample_id: s.answer for s in dataset}
        report = evaluate_run(dataset, preds, RuleJudge())
        per_task = report.per_task
        assert per_task["presence"]["acc"] == 1.0
        assert per_task["absolute_position"]["acc"] == 1.0
        assert per_task["relative_position"]["acc"] == 1.0
        assert per_task["color"]["acc"] == 1.0
        assert per_task["modality"]["acc"] == 1.0
        assert per_task["scene"]["acc"] == 1.0
        assert per_task["counting"]["mae"] == 0.0
        assert per_task["resolution"]["mae"] == 0.0
        assert per_task["geometry"]["mae"] == 0.0
        assert per_task["vectorize"]["ciou"] == 1.0
        assert per_task["multilabel"]["f1"] == 1.0
        assert not report.incomplete
        assert report.missing == 0

    def test_deterministic_report(self):
        data = [
            mk("p1", "presence", "plain", "q", "Yes"),
            mk("c1", "counting", "plain", "q", "3"),
        ]
        preds = {"p1": "yes", "c1": "2"}
        a = json.dumps(evaluate_run(data, preds).to_dict(), sort_keys=True)
        b = json.dumps(evaluate_run(data, preds).to_dict(), sort_keys=True)
        assert a == b

    def test_internal_consistency_of_aggregates(self, small_corpus, tmp_path):
        client = LlmClient(MockBackend(), rate=10**6, sleep=lambda s: None)
        hnst = build_hnstd(small_corpus, HnstConfig(targets=scaled_targets(0.003), seed=5), client)
        dataset = hnst.train + hnst.test
        rng = random.Random(0)
        preds = {
            s.sample_id: (s.answer if rng.random() < 0.7 else "wrong")
            for s in dataset
        }
        report = evaluate_run(dataset, preds, RuleJudge())
        for task in ("absolute_position", "relative_position"):
            section = report.per_task[task]
            assert section["acc"] == pytest.approx(
                acc_eq1(section["acc_fact"], section["acc_dec"]), abs=1e-12
            )
        color = report.per_task["color"]
        assert color["acc"] == pytest.approx(
            acc_eq2(color["acc_fact"], color["acc_dec_ex"], color["acc_dec_pan"]), abs=1e-12
        )

    def test_missing_predictions_counted_wrong(self):
        data = [mk("p1", "presence", "plain", "q", "Yes"), mk("p2", "presence", "plain", "q", "No")]
        report = evaluate_run(data, {"p1": "Yes"})
        assert report.per_task["presence"]["acc"] == 0.5
        assert report.missing == 1
        assert not report.incomplete
