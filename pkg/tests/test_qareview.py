from __future__ import annotations

import json
import threading
import urllib.request

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsinstruct.qareview import (
    ConflictError,
    IncompleteError,
    QaError,
    ReviewSession,
    SessionStore,
    accuracy_report,
    demo_session,
    sample_pairs,
    sentence_category,
    split_sentence_spans,
    split_sentences,
)
from rsinstruct.qaserver import make_server


class TestSamplePairs:
    def make_dataset(self, n):
        return [{"image_id": f"i{k}", "uri": "", "caption": f"Caption {k}."} for k in range(n)]

    def test_exhaustive_sample(self):
        data = self.make_dataset(10)
        out = sample_pairs(data, 10, seed=3)
        assert sorted(p["image_id"] for p in out) == sorted(p["image_id"] for p in data)

    def test_deterministic_under_seed(self):
        data = self.make_dataset(400)
        assert sample_pairs(data, 315, seed=9) == sample_pairs(data, 315, seed=9)
        assert sample_pairs(data, 315, seed=9) != sample_pairs(data, 315, seed=10)

    def test_oversample_rejected(self):
        with pytest.raises(QaError):
            sample_pairs(self.make_dataset(3), 4, seed=0)

    def test_without_replacement(self):
        data = self.make_dataset(50)
        out = sample_pairs(data, 30, seed=1)
        assert len({p["image_id"] for p in out}) == 30


class TestSplitSentences:
    def test_two_plain_sentences(self):
        assert split_sentences("A road. Two houses.") == ["A road.", "Two houses."]

    def test_decimal_protected(self):
        out = split_sentences("Resolution is 0.5 m. It is rural.")
        assert out == ["Resolution is 0.5 m.", "It is rural."]

    def test_empty(self):
        assert split_sentences("") == []

    def test_abbreviation_protected(self):
        out = split_sentences("Structures, e.g. hangars, appear. A runway crosses.")
        assert len(out) == 2

    def test_multiple_terminators(self):
        out = split_sentences("Really?! Yes. Fine")
        assert out == ["Really?!", "Yes.", "Fine"]

    @given(st.text(alphabet=" .!?abcdeF0123", max_size=80))
    @settings(max_examples=300)
    def test_reconstruction_property(self, caption):
        spans = split_sentence_spans(caption)
        # spans are ordered, non-overlapping, and the gaps are pure whitespace
        prev_end = 0
        for a, b in spans:
            assert prev_end <= a < b
            assert caption[prev_end:a].strip() == ""
            prev_end = b
        assert caption[prev_end:].strip() == ""
        rebuilt = "".join(
            caption[prev:b] for (prev, b) in
            [(spans[i - 1][1] if i else 0, spans[i][1]) for i in range(len(spans))]
        )
        if spans:
            assert rebuilt + caption[spans[-1][1]:] == caption


class TestSentenceCategory:
    def test_all_accurate(self):
        assert sentence_category(["accurate", "accurate"]) == "CA"

    def test_all_inaccurate(self):
        assert sentence_category(["inaccurate"]) == "CI"

    def test_mixed(self):
        assert sentence_category(["accurate", "inaccurate"]) == "PA"

    def test_unjudged_raises(self):
        with pytest.raises(IncompleteError):
            sentence_category(["accurate", "unjudged"])


class TestSessionMutations:
    def make_session(self):
        pairs = [{"image_id": "a", "uri": "", "caption": "First fact. Second fact."}]
        return ReviewSession.from_pairs("s1", pairs)

    def test_from_pairs_one_piece_per_sentence(self):
        session = self.make_session()
        assert len(session.sentences) == 2
        assert all(len(s["pieces"]) == 1 for s in session.sentences)

    def test_verdict_bumps_revision(self):
        session = self.make_session()
        session.record_verdict(0, 0, "accurate")
        session.record_verdict(0, 0, "inaccurate")  # re-judge: last wins
        assert session.revision == 2
        assert session.sentences[0]["pieces"][0]["verdict"] == "inaccurate"

    def test_out_of_range_leaves_session_unchanged(self):
        session = self.make_session()
        with pytest.raises(QaError):
            session.record_verdict(9, 0, "accurate")
        assert session.revision == 0

    def test_split_piece(self):
        session = self.make_session()
        text = session.sentences[0]["pieces"][0]["text"]
        session.split_piece(0, 0, 5)
        pieces = session.sentences[0]["pieces"]
        assert [p["text"] for p in pieces] == [text[:5], text[5:]]
        assert all(p["verdict"] == "unjudged" for p in pieces)

    def test_merge_keeps_agreeing_verdict(self):
        session = self.make_session()
        session.split_piece(0, 0, 5)
        session.record_verdict(0, 0, "accurate")
        session.record_verdict(0, 1, "accurate")
        session.merge_pieces(0, 0)
        assert session.sentences[0]["pieces"][0]["verdict"] == "accurate"

    def test_merge_conflicting_verdicts_resets(self):
        session = self.make_session()
        session.split_piece(0, 0, 5)
        session.record_verdict(0, 0, "accurate")
        session.record_verdict(0, 1, "inaccurate")
        session.merge_pieces(0, 0)
        assert session.sentences[0]["pieces"][0]["verdict"] == "unjudged"

    def test_completeness(self):
        session = self.make_session()
        assert not session.is_complete()
        session.record_verdict(0, 0, "accurate")
        session.record_verdict(1, 0, "inaccurate")
        assert session.is_complete()


class TestAccuracyReport:
    def test_paper_fixture_value(self):
        report = accuracy_report(demo_session())
        assert report["ca"] == 73 and report["ci"] == 10 and report["pa"] == 17
        assert report["piece_accuracy"] == pytest.approx(0.55)
        assert report["overall"] == pytest.approx(0.8235, abs=1e-12)
        assert report["display"] == "82.3%"

    def test_all_ca_is_one(self):
        pairs = [{"image_id": "a", "uri": "", "caption": "One. Two."}]
        session = ReviewSession.from_pairs("s", pairs)
        session.record_verdict(0, 0, "accurate")
        session.record_verdict(1, 0, "accurate")
        assert accuracy_report(session)["overall"] == 1.0

    def test_pa_only_formula(self):
        pairs = [{"image_id": "a", "uri": "", "caption": "Only sentence."}]
        session = ReviewSession.from_pairs("s", pairs)
        session.split_piece(0, 0, 4)
        session.record_verdict(0, 0, "accurate")
        session.record_verdict(0, 1, "inaccurate")
        report = accuracy_report(session)
        assert report["overall"] == pytest.approx(0.5)

    def test_incomplete_needs_partial_flag(self):
        pairs = [{"image_id": "a", "uri": "", "caption": "One. Two."}]
        session = ReviewSession.from_pairs("s", pairs)
        session.record_verdict(0, 0, "accurate")
        with pytest.raises(IncompleteError):
            accuracy_report(session)
        partial = accuracy_report(session, partial=True)
        assert partial["judged_sentences"] == 1
        assert partial["partial"] is True

    def test_zero_judged_undefined(self):
        pairs = [{"image_id": "a", "uri": "", "caption": "One."}]
        session = ReviewSession.from_pairs("s", pairs)
        report = accuracy_report(session, partial=True)
        assert report["overall"] is None
        assert report["display"] == "undefined"

    def test_recompute_matches_after_mutations(self):
        session = demo_session()
        before = accuracy_report(session)
        # flip one PA piece inaccurate -> accurate and back
        idx = next(i for i, s in enumerate(session.sentences) if len(s["pieces"]) > 1)
        session.record_verdict(idx, 19, "accurate")
        up = accuracy_report(session)
        assert up["overall"] > before["overall"]
        session.record_verdict(idx, 19, "inaccurate")
        again = accuracy_report(session)
        assert again["overall"] == pytest.approx(before["overall"], abs=1e-15)

    def test_monotone_under_pa_flip(self):
        # flipping any single PA piece from inaccurate to accurate never lowers the score
        session = demo_session()
        base = accuracy_report(session)["overall"]
        for sentence_idx, sentence in enumerate(session.sentences):
            if len(sentence["pieces"]) == 1:
                continue
            for piece_idx, piece in enumerate(sentence["pieces"]):
                if piece["verdict"] == "inaccurate":
                    session.record_verdict(sentence_idx, piece_idx, "accurate")
                    assert accuracy_report(session)["overall"] >= base - 1e-15
                    session.record_verdict(sentence_idx, piece_idx, "inaccurate")
            break


class TestStorePersistence:
    def test_save_load_roundtrip(self, tmp_path):
        store = SessionStore(tmp_path)
        session = demo_session()
        store.save(session)
        loaded = store.load("demo")
        assert loaded.to_dict() == session.to_dict()

    def test_mutate_checks_revision(self, tmp_path):
        store = SessionStore(tmp_path)
        store.save(demo_session())
        updated = store.mutate("demo", 0, "record_verdict", 0, 0, "inaccurate")
        assert updated.revision == 1
        with pytest.raises(ConflictError):
            store.mutate("demo", 0, "record_verdict", 0, 0, "accurate")

    def test_acknowledged_mutation_survives_reload(self, tmp_path):
        store = SessionStore(tmp_path)
        store.save(demo_session())
        store.mutate("demo", None, "record_verdict", 0, 0, "inaccurate")
        fresh = SessionStore(tmp_path).load("demo")
        assert fresh.sentences[0]["pieces"][0]["verdict"] == "inaccurate"
        assert fresh.revision == 1

    def test_invalid_session_id_rejected(self, tmp_path):
        store = SessionStore(tmp_path)
        with pytest.raises(QaError):
            store.load("../../etc/passwd")


class TestHttpApi:
    @pytest.fixture()
    def server(self, tmp_path):
        store = SessionStore(tmp_path / "store")
        store.save(demo_session())
        srv = make_server(tmp_path / "store", port=0)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        yield f"http://127.0.0.1:{srv.server_address[1]}"
        srv.shutdown()
        srv.server_close()

    def fetch(self, url, payload=None):
        req = url
        if payload is not None:
            req = urllib.request.Request(
                url, data=json.dumps(payload).encode(),
                headers={"Content-Type": "application/json"},
            )
        try:
            with urllib.request.urlopen(req) as resp:
                return resp.status, json.loads(resp.read())
        except urllib.error.HTTPError as err:
            return err.code, json.loads(err.read())

    def test_list_and_fetch(self, server):
        status, listing = self.fetch(f"{server}/api/sessions")
        assert status == 200
        assert listing["sessions"][0]["session_id"] == "demo"
        status, session = self.fetch(f"{server}/api/sessions/demo")
        assert status == 200
        assert session["complete"] is True
        assert len(session["sentences"]) == 100
        assert session["sentences"][0]["category"] == "CA"

    def test_report_endpoint(self, server):
        status, report = self.fetch(f"{server}/api/sessions/demo/report")
        assert status == 200
        assert report["overall"] == pytest.approx(0.8235)

    def test_verdict_with_revision_check(self, server):
        _, session = self.fetch(f"{server}/api/sessions/demo")
        rev = session["revision"]
        status, out = self.fetch(
            f"{server}/api/sessions/demo/verdict",
            {"sentence": 0, "piece": 0, "verdict": "inaccurate", "revision": rev},
        )
        assert status == 200 and out["revision"] == rev + 1
        status, out = self.fetch(
            f"{server}/api/sessions/demo/verdict",
            {"sentence": 0, "piece": 0, "verdict": "accurate", "revision": rev},
        )
        assert status == 409

    def test_unknown_session_404_shape(self, server):
        status, out = self.fetch(f"{server}/api/sessions/ghost/report")
        assert status == 400 and "ghost" in out["error"]

    def test_missing_frontend_note(self, server):
        status, out = self.fetch(f"{server}/")
        assert status == 404
        assert "frontend" in out["error"]
