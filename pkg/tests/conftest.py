from __future__ import annotations

import pytest

from rsinstruct.captioner import LlmClient, MockBackend
from rsinstruct.synth import generate_corpus


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(600, seed=1234)


@pytest.fixture()
def mock_client(tmp_path):
    def make(backend=None, **kwargs):
        kwargs.setdefault("cache_dir", tmp_path / "cache")
        kwargs.setdefault("transcript_path", tmp_path / "transcripts.jsonl")
        kwargs.setdefault("rate", 10**6)
        kwargs.setdefault("sleep", lambda s: None)
        kwargs.setdefault("clock", lambda: 0.0)
        return LlmClient(backend or MockBackend(), **kwargs)

    return make
