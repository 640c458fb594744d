from __future__ import annotations

import threading

import pytest

from rsinstruct.captioner import (
    BackendUnavailable,
    Dialogue,
    DialogueRejected,
    LlmClient,
    LlmRequest,
    MockBackend,
    RateLimiter,
    TemplateError,
    TransportError,
    load_template,
    normalize_color,
    parse_dialogue,
)
from rsinstruct.geometry import Box


class FlakyBackend:
    """Fails n times, then answers."""

    backend_id = "flaky"

    def __init__(self, failures: int, response: str = "ok"):
        self.failures = failures
        self.response = response
        self.calls = 0

    def send(self, request: LlmRequest) -> str:
        self.calls += 1
        if self.calls <= self.failures:
            raise BackendUnavailable("synthetic outage")
        return self.response


class TestTemplates:
    def test_render_binds_placeholders(self):
        template = load_template("color_a")
        text = template.render(category="storage tank")
        assert "storage tank" in text

    def test_unbound_placeholder_fails(self):
        template = load_template("caption")
        with pytest.raises(TemplateError):
            template.render()

    def test_all_templates_load(self):
        for name in ("caption", "color_a", "color_b", "conversation", "reasoning", "judge_color"):
            assert load_template(name).text


class TestMockDeterminism:
    def test_same_request_same_text(self, mock_client):
        client = mock_client()
        a, _ = client.caption_image("synthetic://img-7")
        b, _ = client.caption_image("synthetic://img-7")
        assert a == b

    def test_fixture_overrides(self, mock_client):
        backend = MockBackend(fixtures={("caption", "img-7"): "canned caption"})
        client = mock_client(backend)
        text, _ = client.caption_image("img-7")
        assert text == "canned caption"

    def test_different_refs_differ_somewhere(self, mock_client):
        client = mock_client()
        texts = {client.caption_image(f"img-{i}")[0] for i in range(12)}
        assert len(texts) > 1


class TestRetry:
    def test_recovers_within_budget(self, tmp_path):
        backend = FlakyBackend(failures=2)
        client = LlmClient(backend, max_retries=3, sleep=lambda s: None, rate=10**6)
        text, _ = client.send(LlmRequest("caption", "p"))
        assert text == "ok"
        assert backend.calls == 3

    def test_transport_error_carries_attempts(self, tmp_path):
        backend = FlakyBackend(failures=99)
        client = LlmClient(backend, max_retries=2, sleep=lambda s: None, rate=10**6)
        with pytest.raises(TransportError) as err:
            client.send(LlmRequest("caption", "p"))
        assert err.value.attempts == 3  # initial try + 2 retries


class TestCache:
    def test_replay_issues_zero_network_requests(self, tmp_path):
        cache = tmp_path / "cache"
        first = LlmClient(MockBackend(), cache_dir=cache, rate=10**6, sleep=lambda s: None)
        requests = [LlmRequest("caption", f"prompt {i}", f"img{i}") for i in range(50)]
        for r in requests:
            first.send(r)
        assert first.requests_sent == 50

        replay = LlmClient(MockBackend(), cache_dir=cache, rate=10**6, sleep=lambda s: None)
        for r in requests:
            replay.send(r)
        assert replay.requests_sent == 0
        assert replay.cache_hits == 50

    def test_cache_key_distinguishes_templates(self, tmp_path):
        client = LlmClient(MockBackend(), cache_dir=tmp_path / "c", rate=10**6, sleep=lambda s: None)
        client.send(LlmRequest("color_a", "same prompt", "img"))
        client.send(LlmRequest("color_b", "same prompt", "img"))
        assert client.requests_sent == 2


class TestRateLimiter:
    def test_never_exceeds_budget_per_interval(self):
        now = [0.0]
        sleeps = []

        def monotonic():
            return now[0]

        def sleep(s):
            sleeps.append(s)
            now[0] += s

        limiter = RateLimiter(rate=3, interval=1.0, monotonic=monotonic, sleep=sleep)
        stamps = []
        for _ in range(10):
            limiter.acquire()
            stamps.append(now[0])
        for start in range(len(stamps)):
            window = [s for s in stamps if stamps[start] <= s < stamps[start] + 1.0]
            assert len(window) <= 3

    def test_inflight_bound_observed(self, tmp_path):
        class SlowBackend:
            backend_id = "slow"

            def __init__(self):
                self.event = threading.Event()

            def send(self, request):
                self.event.wait(0.05)
                return "x"

        client = LlmClient(SlowBackend(), max_in_flight=4, rate=10**6, sleep=lambda s: None)
        threads = [
            threading.Thread(target=client.send, args=(LlmRequest("caption", f"p{i}"),))
            for i in range(16)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert client.max_inflight_observed <= 4
        assert client.requests_sent == 16


class TestColorExtraction:
    def test_consistent_pair_accepted(self, mock_client):
        backend = MockBackend(fixtures={("color_a", "img"): "Red.", ("color_b", "img"): "red"})
        outcome = mock_client(backend).extract_color("img", "ship")
        assert outcome.consistent and outcome.color == "red"

    def test_disagreement_is_inconsistent_not_error(self, mock_client):
        backend = MockBackend(fixtures={("color_a", "img"): "red", ("color_b", "img"): "orange"})
        outcome = mock_client(backend).extract_color("img", "ship")
        assert not outcome.consistent and outcome.color is None

    def test_disagree_refs_knob(self, mock_client):
        ref = "synthetic://imgZ"
        outcome = mock_client(MockBackend(disagree_refs={ref})).extract_color(ref, "ship")
        assert not outcome.consistent

    def test_crop_changes_mock_identity(self, mock_client):
        client = mock_client()
        a = client.extract_color("img", "ship", crop=Box(0, 0, 10, 10))
        b = client.extract_color("img", "ship", crop=Box(5, 5, 20, 20))
        assert a.transcript_ids != b.transcript_ids

    def test_two_transcripts_recorded(self, mock_client):
        outcome = mock_client().extract_color("img", "ship")
        assert len(outcome.transcript_ids) == 2


class TestNormalizeColor:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("Red.", "red"),
            ("  BLUE ", "blue"),
            ("the color is dark green overall", "green"),
            ("grey", "gray"),
            ("no idea", None),
        ],
    )
    def test_cases(self, raw, expected):
        assert normalize_color(raw) == expected


class TestDialogue:
    def test_mock_dialogue_parses(self, mock_client):
        result = mock_client().gen_dialogue("img", "A scene.", "- ship at [0,0,10,10]")
        assert isinstance(result, Dialogue)
        assert len(result.turns) >= 2
        roles = [t["role"] for t in result.turns]
        assert roles[::2] == ["user"] * (len(roles) // 2)

    def test_reasoning_mode(self, mock_client):
        result = mock_client().gen_dialogue("img", "A scene.", "", mode="reasoning")
        assert isinstance(result, Dialogue)
        assert result.mode == "reasoning"
        assert len(result.turns) == 2

    def test_malformed_then_reprompt_then_reject(self, mock_client):
        backend = MockBackend(fixtures={"imgbad": "no role markers here"})
        result = mock_client(backend).gen_dialogue("imgbad", "A scene.", "")
        assert isinstance(result, DialogueRejected)
        assert result.raw == "no role markers here"
        assert len(result.transcript_ids) == 2

    def test_parse_dialogue_grammar(self):
        good = "User: hi\nAssistant: hello"
        assert parse_dialogue(good) is not None
        assert parse_dialogue("Assistant: hi\nUser: hello") is None
        assert parse_dialogue("User: hi") is None
        assert parse_dialogue("User: hi\nAssistant:") is None

    def test_empty_caption_rejected(self, mock_client):
        with pytest.raises(ValueError):
            mock_client().gen_dialogue("img", "   ", "")


class TestTranscripts:
    def test_transcripts_are_logged_jsonl(self, tmp_path):
        import json

        path = tmp_path / "t.jsonl"
        client = LlmClient(
            MockBackend(), transcript_path=path, rate=10**6,
            sleep=lambda s: None, clock=lambda: 42.0,
        )
        client.caption_image("imgA")
        records = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(records) == 1
        assert records[0]["template"] == "caption"
        assert records[0]["cached"] is False
        assert records[0]["timestamp"] == 42.0
