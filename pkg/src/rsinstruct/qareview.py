"""Caption quality-assessment workflow: sample image-caption pairs, split
captions into sentences and information pieces, record human verdicts, and
compute the accuracy statistic (completely/partially accurate composition).

Sessions are persisted write-ahead: every mutation is atomically written and
fsynced before the caller sees an acknowledgment, so a crash never loses an
acknowledged verdict.
"""
from __future__ import annotations

import json
import os
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

VERDICTS = ("unjudged", "accurate", "inaccurate")

# Word endings that keep their trailing dot inside a sentence.
_ABBREVIATIONS = {
    "e.g", "i.e", "etc", "vs", "cf", "fig", "figs", "no", "nos",
    "approx", "mr", "mrs", "dr", "st", "al",
}


class QaError(ValueError):
    pass


class ConflictError(QaError):
    """Client supplied a stale revision; it must refresh before mutating."""


class IncompleteError(QaError):
    pass


def split_sentence_spans(text: str) -> list[tuple[int, int]]:
    """Spans of sentences delimited by terminal punctuation.

    Decimal points and common abbreviations do not split. Whitespace between
    spans is preserved by construction, so the spans plus the gaps always
    reconstruct the input exactly.
    """
    spans = []
    n = len(text)
    start = 0
    i = 0
    while i < n:
        ch = text[i]
        if ch in ".!?":
            if ch == ".":
                prev_c = text[i - 1] if i > 0 else ""
                next_c = text[i + 1] if i + 1 < n else ""
                if prev_c.isdigit() and next_c.isdigit():
                    i += 1
                    continue
                word = re.search(r"[\w.]+$", text[:i])
                if word and word.group(0).lower().rstrip(".") in _ABBREVIATIONS:
                    i += 1
                    continue
            j = i
            while j + 1 < n and text[j + 1] in ".!?":
                j += 1
            if j + 1 < n and not text[j + 1].isspace():
                i = j + 1
                continue
            spans.append((start, j + 1))
            start = j + 1
            i = j + 1
        else:
            i += 1
    if start < n:
        spans.append((start, n))
    trimmed = []
    for a, b in spans:
        while a < b and text[a].isspace():
            a += 1
        while b > a and text[b - 1].isspace():
            b -= 1
        if a < b:
            trimmed.append((a, b))
    return trimmed


def split_sentences(caption: str) -> list[str]:
    return [caption[a:b] for a, b in split_sentence_spans(caption)]


def sentence_category(verdicts: Sequence[str]) -> str:
    """CA when all pieces are accurate, CI when all inaccurate, PA when mixed."""
    if not verdicts:
        raise IncompleteError("sentence has no pieces")
    if any(v == "unjudged" for v in verdicts):
        raise IncompleteError("sentence has unjudged pieces")
    if all(v == "accurate" for v in verdicts):
        return "CA"
    if all(v == "inaccurate" for v in verdicts):
        return "CI"
    return "PA"


def sample_pairs(dataset: Sequence[dict], n: int, seed: int) -> list[dict]:
    """Uniform sample without replacement, deterministic under the seed."""
    if n > len(dataset):
        raise QaError(f"cannot sample {n} pairs from {len(dataset)}")
    return random.Random(seed).sample(list(dataset), n)


def load_caption_pairs(path: Path) -> list[dict]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pairs.append(
                {
                    "image_id": str(rec.get("image_id", len(pairs))),
                    "uri": str(rec.get("uri", "")),
                    "caption": str(rec["caption"]),
                }
            )
    return pairs


@dataclass
class ReviewSession:
    session_id: str
    pairs: list = field(default_factory=list)
    sentences: list = field(default_factory=list)
    annotations: dict = field(default_factory=dict)
    revision: int = 0

    @classmethod
    def from_pairs(cls, session_id: str, pairs: Sequence[dict]) -> "ReviewSession":
        session = cls(session_id=session_id, pairs=[dict(p) for p in pairs])
        for pair_idx, pair in enumerate(session.pairs):
            for sent in split_sentences(pair["caption"]):
                session.sentences.append(
                    {
                        "pair": pair_idx,
                        "text": sent,
                        "pieces": [{"text": sent, "verdict": "unjudged"}],
                    }
                )
        return session

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "revision": self.revision,
            "pairs": self.pairs,
            "sentences": self.sentences,
            "annotations": self.annotations,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReviewSession":
        return cls(
            session_id=doc["session_id"],
            pairs=doc.get("pairs", []),
            sentences=doc.get("sentences", []),
            annotations=doc.get("annotations", {}),
            revision=int(doc.get("revision", 0)),
        )

    # -- mutations (callers persist through SessionStore) --

    def _piece(self, sentence_idx: int, piece_idx: int) -> dict:
        try:
            sentence = self.sentences[sentence_idx]
        except IndexError:
            raise QaError(f"sentence index {sentence_idx} out of range")
        pieces = sentence["pieces"]
        if not 0 <= piece_idx < len(pieces):
            raise QaError(f"piece index {piece_idx} out of range")
        return pieces[piece_idx]

    def record_verdict(self, sentence_idx: int, piece_idx: int, verdict: str) -> None:
        if verdict not in VERDICTS:
            raise QaError(f"unknown verdict {verdict!r}")
        piece = self._piece(sentence_idx, piece_idx)
        piece["verdict"] = verdict
        self.revision += 1

    def split_piece(self, sentence_idx: int, piece_idx: int, offset: int) -> None:
        piece = self._piece(sentence_idx, piece_idx)
        text = piece["text"]
        if not 0 < offset < len(text):
            raise QaError(f"split offset {offset} not inside piece of length {len(text)}")
        pieces = self.sentences[sentence_idx]["pieces"]
        pieces[piece_idx: piece_idx + 1] = [
            {"text": text[:offset], "verdict": "unjudged"},
            {"text": text[offset:], "verdict": "unjudged"},
        ]
        self.revision += 1

    def merge_pieces(self, sentence_idx: int, piece_idx: int) -> None:
        pieces = self.sentences[sentence_idx]["pieces"] if 0 <= sentence_idx < len(self.sentences) else None
        if pieces is None:
            raise QaError(f"sentence index {sentence_idx} out of range")
        if not 0 <= piece_idx < len(pieces) - 1:
            raise QaError("merge needs a piece with a right neighbour")
        left, right = pieces[piece_idx], pieces[piece_idx + 1]
        verdict = left["verdict"] if left["verdict"] == right["verdict"] else "unjudged"
        pieces[piece_idx: piece_idx + 2] = [
            {"text": left["text"] + right["text"], "verdict": verdict}
        ]
        self.revision += 1

    # -- derived state --

    def is_complete(self) -> bool:
        return all(
            p["verdict"] != "unjudged"
            for s in self.sentences
            for p in s["pieces"]
        )

    def judged_sentences(self) -> list[dict]:
        return [
            s for s in self.sentences
            if all(p["verdict"] != "unjudged" for p in s["pieces"])
        ]


def accuracy_report(session: ReviewSession, partial: bool = False) -> dict:
    """Overall accuracy = CA fraction + PA fraction x piece accuracy in PA."""
    if not partial and not session.is_complete():
        raise IncompleteError(
            f"session {session.session_id} has unjudged pieces; pass partial=True to report anyway"
        )
    judged = session.judged_sentences()
    counts = {"CA": 0, "CI": 0, "PA": 0}
    pa_pieces = 0
    pa_accurate = 0
    for sentence in judged:
        verdicts = [p["verdict"] for p in sentence["pieces"]]
        cat = sentence_category(verdicts)
        counts[cat] += 1
        if cat == "PA":
            pa_pieces += len(verdicts)
            pa_accurate += sum(1 for v in verdicts if v == "accurate")
    n = len(judged)
    piece_acc = pa_accurate / pa_pieces if pa_pieces else 0.0
    overall = (counts["CA"] / n + (counts["PA"] / n) * piece_acc) if n else None
    return {
        "session_id": session.session_id,
        "revision": session.revision,
        "partial": not session.is_complete(),
        "judged_sentences": n,
        "total_sentences": len(session.sentences),
        "ca": counts["CA"],
        "ci": counts["CI"],
        "pa": counts["PA"],
        "pa_pieces": pa_pieces,
        "pa_pieces_accurate": pa_accurate,
        "piece_accuracy": piece_acc,
        "overall": overall,
        "display": f"{overall * 100:.1f}%" if overall is not None else "undefined",
    }


class SessionStore:
    """One JSON file per session; atomic, fsynced writes before every ack."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        if not re.fullmatch(r"[A-Za-z0-9._\-]+", session_id):
            raise QaError(f"invalid session id {session_id!r}")
        return self.root / f"{session_id}.json"

    def list_sessions(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))

    def load(self, session_id: str) -> ReviewSession:
        path = self._path(session_id)
        if not path.exists():
            raise QaError(f"no such session {session_id!r}")
        return ReviewSession.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def save(self, session: ReviewSession) -> None:
        path = self._path(session.session_id)
        tmp = path.with_suffix(".json.tmp")
        data = json.dumps(session.to_dict(), ensure_ascii=False)
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        dir_fd = os.open(self.root, os.O_RDONLY)
        try:
            os.fsync(dir_fd)
        finally:
            os.close(dir_fd)

    def mutate(self, session_id: str, expected_revision: Optional[int], op, *args) -> ReviewSession:
        """Load-check-mutate-persist; returns the updated session."""
        session = self.load(session_id)
        if expected_revision is not None and expected_revision != session.revision:
            raise ConflictError(
                f"revision mismatch: expected {expected_revision}, have {session.revision}"
            )
        getattr(session, op)(*args)
        self.save(session)
        return session


def demo_session(session_id: str = "demo") -> ReviewSession:
    """Seeded fixture with the reference assessment mix: out of 100
    sentences, 73 fully accurate, 10 fully inaccurate, 17 mixed with 55% of
    their pieces accurate; overall accuracy 0.8235."""
    batch = []
    for i in range(73):
        text = f"Accurate demo sentence {i}."
        batch.append({"text": text, "pieces": [{"text": text, "verdict": "accurate"}]})
    for i in range(10):
        text = f"Inaccurate demo sentence {i}."
        batch.append({"text": text, "pieces": [{"text": text, "verdict": "inaccurate"}]})
    for i in range(17):
        # 20 pieces, 11 accurate each: pooled accuracy 17*11/(17*20) = 0.55
        text = f"Mixed demo sentence {i}."
        pieces = [
            {"text": f"{text} piece {j}", "verdict": "accurate" if j < 11 else "inaccurate"}
            for j in range(20)
        ]
        batch.append({"text": text, "pieces": pieces})
    pairs = []
    sentences = []
    for start in range(0, len(batch), 10):
        chunk = batch[start: start + 10]
        idx = len(pairs)
        pairs.append(
            {
                "image_id": f"demo-{idx:03d}",
                "uri": f"demo://image-{idx:03d}",
                "caption": " ".join(s["text"] for s in chunk),
            }
        )
        for s in chunk:
            sentences.append({"pair": idx, "text": s["text"], "pieces": s["pieces"]})
    return ReviewSession(session_id=session_id, pairs=pairs, sentences=sentences)
