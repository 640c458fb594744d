"""Instruction sample records and their line-delimited serialization."""
from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

TASK_IDS = ("IDK", "VQA", "VG", "CLS", "IT")

TASK_NAMES = (
    "presence", "color", "absolute_position", "relative_position",
    "counting", "modality", "resolution", "geometry", "vectorize",
    "multilabel", "scene", "vqa", "grounding",
)

KINDS = ("factual", "deceptive_ex", "deceptive_pan", "plain")

# Fixed fifth option for single-choice questions; gold answer of deceptive ones.
NONEXISTENCE_OPTION = "None of the above - the object is not present in the image"


def refusal_nonexistence(category: str) -> str:
    return f"There is no {category} in the image, so its color cannot be determined."


def refusal_panchromatic(category: str) -> str:
    return (
        f"This is a panchromatic image, so the color of the {category} "
        "cannot be determined from it."
    )


@dataclass(frozen=True)
class InstructionSample:
    sample_id: str
    image_id: str
    task_id: str
    task_name: str
    kind: str
    question: str
    answer: str
    choices: Optional[tuple[str, ...]] = None
    provenance: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise ValueError(f"unknown task_id {self.task_id!r}")
        if self.task_name not in TASK_NAMES:
            raise ValueError(f"unknown task_name {self.task_name!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.choices is not None:
            if len(set(self.choices)) != len(self.choices):
                raise ValueError(f"{self.sample_id}: duplicate choices")
            if self.answer not in self.choices:
                raise ValueError(f"{self.sample_id}: answer not among choices")


def sample_to_dict(sample: InstructionSample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "image_id": sample.image_id,
        "task_id": sample.task_id,
        "task_name": sample.task_name,
        "kind": sample.kind,
        "question": sample.question,
        "answer": sample.answer,
        "choices": list(sample.choices) if sample.choices is not None else None,
        "provenance": sample.provenance,
    }


def sample_from_dict(rec: dict) -> InstructionSample:
    choices = rec.get("choices")
    return InstructionSample(
        sample_id=rec["sample_id"],
        image_id=rec["image_id"],
        task_id=rec["task_id"],
        task_name=rec["task_name"],
        kind=rec.get("kind", "plain"),
        question=rec["question"],
        answer=rec["answer"],
        choices=tuple(choices) if choices is not None else None,
        provenance=rec.get("provenance", {}),
    )


def write_jsonl_atomic(records: Iterable[dict], path: Path) -> None:
    """Write line-delimited JSON via temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    os.replace(tmp, path)


def write_samples_jsonl(samples: Sequence[InstructionSample], path: Path) -> None:
    write_jsonl_atomic((sample_to_dict(s) for s in samples), path)


def read_samples_jsonl(path: Path) -> list[InstructionSample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(sample_from_dict(json.loads(line)))
    return out


def derive_rng(seed: int, image_id: str, task: str, index: int) -> random.Random:
    """Per-sample RNG: a pure function of (seed, image id, task, index) so
    generation is independent of iteration order and worker schedule."""
    digest = hashlib.blake2b(
        f"{seed}\x1f{image_id}\x1f{task}\x1f{index}".encode("utf-8"),
        digest_size=8,
    ).digest()
    return random.Random(int.from_bytes(digest, "big"))


def render_choices(choices: Sequence[str]) -> str:
    letters = "ABCDE"
    parts = [f"({letters[i]}) {text}" for i, text in enumerate(choices)]
    return " Options: " + " ".join(parts) + ". Answer with the correct option."
