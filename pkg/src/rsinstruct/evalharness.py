"""Scoring of model predictions against generated datasets.

Closed-form tasks use a documented matching strategy (normalization plus
option-letter resolution); open-ended deceptive color answers go through a
judge (rule-based offline mock or an LLM adapter); numeric, grounding,
vectorizing and multi-label tasks use MAE, Acc@IoU, complexity-aware IoU and
example-based F1 respectively. Every aggregate stores its components so the
two-level accuracy averages stay auditable.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .captioner import LlmClient, LlmRequest, TransportError, load_template
from .geometry import Box, ciou, iou
from .samples import InstructionSample

_TERMINAL_PUNCT = ".,!?;:"

_COLOR_SYNONYMS = {"grey": "gray"}  # documented extension to plain matching


class PredictionError(ValueError):
    pass


def load_predictions(path: Path) -> dict[str, str]:
    """Line-delimited records {sample_id, output}; duplicate ids rejected."""
    preds: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            sid = rec.get("sample_id")
            if sid is None:
                raise PredictionError(f"{path}:{lineno}: record without sample_id")
            if sid in preds:
                raise PredictionError(f"{path}:{lineno}: duplicate prediction for {sid}")
            out = rec.get("output", rec.get("prediction", rec.get("answer")))
            if out is None:
                raise PredictionError(f"{path}:{lineno}: record without output text")
            preds[sid] = str(out)
    return preds


def normalize_answer(text: str, choices: Optional[Sequence[str]] = None) -> str:
    """Canonical form for matching: lowercase, trimmed, terminal punctuation
    stripped, whitespace collapsed; option letters resolve against choices."""
    s = re.sub(r"\s+", " ", str(text).strip().lower()).strip()
    s = s.rstrip(_TERMINAL_PUNCT).strip()
    if choices:
        normalized_choices = [normalize_answer(c) for c in choices]
        m = re.match(r"^\(?([a-e])(?:\)|\.|:)\s*(.*)$", s)
        if m is None and len(s) == 1 and s in "abcde":
            m = re.match(r"^([a-e])()$", s)
        if m:
            idx = ord(m.group(1)) - ord("a")
            if idx < len(normalized_choices):
                rest = m.group(2).strip()
                if not rest or rest == normalized_choices[idx]:
                    return normalized_choices[idx]
        for canon in normalized_choices:
            if s == canon:
                return canon
    return s


def _leading_yes_no(text: str) -> Optional[str]:
    m = re.match(r"^(yes|no)\b", text.strip().lower())
    return m.group(1) if m else None


def matches(prediction: str, sample: InstructionSample) -> bool:
    gold = normalize_answer(sample.answer, sample.choices)
    pred = normalize_answer(prediction, sample.choices)
    if sample.task_name == "presence":
        lead = _leading_yes_no(pred)
        if lead is not None:
            pred = lead
        return pred == gold
    if sample.task_name == "color" and sample.kind == "factual":
        return _canon_color(pred) == _canon_color(gold)
    return pred == gold


def _canon_color(token: str) -> str:
    return _COLOR_SYNONYMS.get(token, token)


# --- the two-level accuracy aggregates ---

def _check_unit(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value


def acc_eq1(acc_fact: float, acc_dec: float) -> float:
    """Average of factual and deceptive accuracy."""
    return (_check_unit("acc_fact", acc_fact) + _check_unit("acc_dec", acc_dec)) / 2.0


def acc_eq2(acc_fact: float, acc_dec_ex: float, acc_dec_pan: float) -> float:
    """Factual accuracy averaged with the mean of the two deceptive causes."""
    inner = (
        _check_unit("acc_dec_ex", acc_dec_ex) + _check_unit("acc_dec_pan", acc_dec_pan)
    ) / 2.0
    return (_check_unit("acc_fact", acc_fact) + inner) / 2.0


# --- judges for open-ended deceptive color answers ---

_REFUSAL_CUES = (
    "there is no", "there are no", "not present", "does not exist", "doesn't exist",
    "cannot be determined", "can't be determined", "cannot determine",
    "unable to determine", "not visible", "is absent", "no such",
)

_PAN_CUES = (
    "panchromatic", "grayscale", "greyscale", "gray-scale", "grey-scale",
    "single-band", "single band", "black and white", "no color information",
)


class RuleJudge:
    """Offline verdicts: a deceptive answer is correct iff it declines.

    Refusal cues mark a decline; for panchromatic questions, citing the
    grayscale limitation also counts. Anything else, including a plain color
    statement, is an affirmative answer and therefore wrong.
    """

    def verdict(self, sample: InstructionSample, prediction: str) -> Optional[bool]:
        text = prediction.lower()
        if any(cue in text for cue in _REFUSAL_CUES):
            return True
        if sample.kind == "deceptive_pan" and any(cue in text for cue in _PAN_CUES):
            return True
        return False


class LlmJudge:
    """Judge backed by the shared LLM client; transport failure -> unscored."""

    def __init__(self, client: LlmClient):
        self.client = client
        self.template = load_template("judge_color")

    def verdict(self, sample: InstructionSample, prediction: str) -> Optional[bool]:
        reason = (
            "the queried object is not in the image"
            if sample.kind == "deceptive_ex"
            else "the image is panchromatic, so color is undefined"
        )
        prompt = self.template.render(
            question=sample.question, reason=reason, answer=prediction
        )
        try:
            text, _ = self.client.send(LlmRequest("judge_color", prompt, sample.image_id))
        except TransportError:
            return None
        return text.strip().lower().startswith("correct")


# --- numeric / geometric parsers ---

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")
_BOX_RE = re.compile(
    r"\[\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\]"
)


def parse_numbers(text: str, count: int) -> Optional[list[float]]:
    found = _NUMBER_RE.findall(str(text))
    if len(found) < count:
        return None
    return [float(v) for v in found[:count]]


def parse_box(text: str) -> Optional[Box]:
    m = _BOX_RE.search(str(text))
    if not m:
        return None
    x1, y1, x2, y2 = (float(g) for g in m.groups())
    if x1 > x2 or y1 > y2:
        return None
    return Box(x1, y1, x2, y2)


def parse_label_set(text: str) -> set[str]:
    return {
        normalize_answer(tok)
        for tok in str(text).split(",")
        if normalize_answer(tok)
    }


# --- per-family scoring primitives ---

def _accuracy(samples: Sequence[InstructionSample], predictions: dict[str, str]) -> tuple[float, int, int]:
    """(accuracy, n, missing); missing predictions count as wrong."""
    n = len(samples)
    if n == 0:
        return 0.0, 0, 0
    correct = 0
    missing = 0
    for s in samples:
        pred = predictions.get(s.sample_id)
        if pred is None:
            missing += 1
            continue
        if matches(pred, s):
            correct += 1
    return correct / n, n, missing


def mae_numeric(
    samples: Sequence[InstructionSample],
    predictions: dict[str, str],
    value_count: int = 1,
    unparseable_penalty: Optional[float] = None,
) -> dict:
    """Mean absolute error over parsed numbers; unparseable predictions take
    the configured penalty (default: the gold magnitude, i.e. pred-as-zero)."""
    errors = []
    unparseable = 0
    missing = 0
    for s in samples:
        gold = parse_numbers(s.answer, value_count)
        if gold is None:
            continue
        pred_text = predictions.get(s.sample_id)
        if pred_text is None:
            missing += 1
            pred = None
        else:
            pred = parse_numbers(pred_text, value_count)
        if pred is None:
            if pred_text is not None:
                unparseable += 1
            penalty = (
                unparseable_penalty
                if unparseable_penalty is not None
                else sum(abs(g) for g in gold) / len(gold)
            )
            errors.append(penalty)
            continue
        errors.append(sum(abs(p - g) for p, g in zip(pred, gold)) / len(gold))
    mae = sum(errors) / len(errors) if errors else 0.0
    return {"mae": mae, "n": len(errors), "unparseable": unparseable, "missing": missing}


def acc_at_iou(
    samples: Sequence[InstructionSample],
    predictions: dict[str, str],
    threshold: float = 0.5,
) -> dict:
    n = len(samples)
    hit = 0
    unparseable = 0
    missing = 0
    for s in samples:
        gold = parse_box(s.answer)
        if gold is None:
            continue
        pred_text = predictions.get(s.sample_id)
        if pred_text is None:
            missing += 1
            continue
        pred = parse_box(pred_text)
        if pred is None:
            unparseable += 1
            continue
        if iou(pred, gold) >= threshold:
            hit += 1
    acc = hit / n if n else 0.0
    return {"acc": acc, "n": n, "threshold": threshold,
            "unparseable": unparseable, "missing": missing}


def _greedy_ciou(pred_polys, gold_polys) -> float:
    """Greedy best-IoU matching; unmatched polygons on either side score 0."""
    if not pred_polys and not gold_polys:
        return 1.0
    if not pred_polys or not gold_polys:
        return 0.0
    pairs = []
    for i, p in enumerate(pred_polys):
        for j, g in enumerate(gold_polys):
            overlap = iou(p, g)
            if overlap > 0:
                pairs.append((overlap, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    total = 0.0
    matched = 0
    for overlap, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        total += ciou(pred_polys[i], gold_polys[j])
        matched += 1
    units = len(pred_polys) + len(gold_polys) - matched
    return total / units if units else 1.0


def ciou_score(samples: Sequence[InstructionSample], predictions: dict[str, str]) -> dict:
    from .variousgen import parse_vertex_answer

    scores = []
    unparseable = 0
    missing = 0
    for s in samples:
        gold = parse_vertex_answer(s.answer)
        if not gold:
            continue
        pred_text = predictions.get(s.sample_id)
        if pred_text is None:
            missing += 1
            scores.append(0.0)
            continue
        pred = parse_vertex_answer(pred_text)
        if not pred:
            unparseable += 1
            scores.append(0.0)
            continue
        scores.append(_greedy_ciou(pred, gold))
    mean = sum(scores) / len(scores) if scores else 0.0
    return {"ciou": mean, "n": len(scores), "unparseable": unparseable, "missing": missing}


def f1_example_based(samples: Sequence[InstructionSample], predictions: dict[str, str]) -> dict:
    """Per-example 2|Y&Z|/(|Y|+|Z|), averaged."""
    scores = []
    missing = 0
    for s in samples:
        gold = parse_label_set(s.answer)
        pred_text = predictions.get(s.sample_id)
        if pred_text is None:
            missing += 1
            scores.append(0.0)
            continue
        pred = parse_label_set(pred_text)
        denom = len(gold) + len(pred)
        scores.append(2 * len(gold & pred) / denom if denom else 1.0)
    f1 = sum(scores) / len(scores) if scores else 0.0
    return {"f1": f1, "n": len(scores), "missing": missing}


# --- task-level scoring ---

def score_match_tasks(dataset: Sequence[InstructionSample], predictions: dict[str, str]) -> dict:
    """Matching-strategy tasks: presence plus the two position tasks, with the
    factual/deceptive average applied where both kinds exist."""
    out = {}
    for task in ("presence", "absolute_position", "relative_position"):
        samples = [s for s in dataset if s.task_name == task]
        if not samples:
            continue
        if task == "presence":
            acc, n, missing = _accuracy(samples, predictions)
            out[task] = {"acc": acc, "n": n, "missing": missing}
            continue
        fact = [s for s in samples if s.kind == "factual"]
        dec = [s for s in samples if s.kind == "deceptive_ex"]
        acc_f, n_f, miss_f = _accuracy(fact, predictions)
        acc_d, n_d, miss_d = _accuracy(dec, predictions)
        section = {
            "acc_fact": acc_f, "n_fact": n_f,
            "acc_dec": acc_d, "n_dec": n_d,
            "missing": miss_f + miss_d,
        }
        if n_f and n_d:
            section["acc"] = acc_eq1(acc_f, acc_d)
        elif n_f or n_d:
            section["acc"] = acc_f if n_f else acc_d
        out[task] = section
    return out


def score_color(dataset: Sequence[InstructionSample], predictions: dict[str, str], judge) -> dict:
    """Factual color by matching; deceptive color by judge verdict."""
    samples = [s for s in dataset if s.task_name == "color"]
    if not samples:
        return {}
    fact = [s for s in samples if s.kind == "factual"]
    acc_f, n_f, miss = _accuracy(fact, predictions)
    section = {"acc_fact": acc_f, "n_fact": n_f, "missing": miss, "unscored": 0}
    dec_accs = {}
    for kind, key in (("deceptive_ex", "acc_dec_ex"), ("deceptive_pan", "acc_dec_pan")):
        subset = [s for s in samples if s.kind == kind]
        section[f"n_{kind}"] = len(subset)
        if not subset:
            continue
        correct = 0
        unscored = 0
        for s in subset:
            pred = predictions.get(s.sample_id)
            if pred is None:
                section["missing"] += 1
                continue
            verdict = judge.verdict(s, pred)
            if verdict is None:
                unscored += 1
                continue
            if verdict:
                correct += 1
        section[key] = correct / len(subset)
        section["unscored"] += unscored
        dec_accs[key] = section[key]
    if n_f and "acc_dec_ex" in dec_accs and "acc_dec_pan" in dec_accs:
        section["acc"] = acc_eq2(acc_f, dec_accs["acc_dec_ex"], dec_accs["acc_dec_pan"])
    return {"color": section}


@dataclass
class ScoreReport:
    per_task: dict
    verdicts: list = field(default_factory=list)
    missing: int = 0
    incomplete: bool = False

    def to_dict(self) -> dict:
        return {
            "per_task": self.per_task,
            "missing_predictions": self.missing,
            "incomplete": self.incomplete,
            "verdicts": self.verdicts,
        }


def evaluate_run(
    dataset: Sequence[InstructionSample],
    predictions: dict[str, str],
    judge=None,
) -> ScoreReport:
    """Dispatch every task family and assemble the auditable report."""
    judge = judge or RuleJudge()
    known = {s.sample_id for s in dataset}
    stray = set(predictions) - known
    if stray:
        raise PredictionError(
            f"{len(stray)} predictions reference unknown sample ids, e.g. {sorted(stray)[:3]}"
        )
    per_task: dict = {}
    per_task.update(score_match_tasks(dataset, predictions))
    per_task.update(score_color(dataset, predictions, judge))

    for task, fn in (("modality", None), ("scene", None), ("vqa", None)):
        samples = [s for s in dataset if s.task_name == task]
        if samples:
            acc, n, missing = _accuracy(samples, predictions)
            per_task[task] = {"acc": acc, "n": n, "missing": missing}

    counting = [s for s in dataset if s.task_name == "counting"]
    if counting:
        per_task["counting"] = mae_numeric(counting, predictions, value_count=1)
    resolution = [s for s in dataset if s.task_name == "resolution"]
    if resolution:
        per_task["resolution"] = mae_numeric(resolution, predictions, value_count=1)
    geometry = [s for s in dataset if s.task_name == "geometry"]
    if geometry:
        per_task["geometry"] = mae_numeric(geometry, predictions, value_count=2)
    grounding = [s for s in dataset if s.task_name == "grounding"]
    if grounding:
        per_task["grounding"] = acc_at_iou(grounding, predictions)
    vectorize = [s for s in dataset if s.task_name == "vectorize"]
    if vectorize:
        per_task["vectorize"] = ciou_score(vectorize, predictions)
    multilabel = [s for s in dataset if s.task_name == "multilabel"]
    if multilabel:
        per_task["multilabel"] = f1_example_based(multilabel, predictions)

    verdicts = []
    missing_total = 0
    incomplete = False
    for s in dataset:
        pred = predictions.get(s.sample_id)
        if pred is None:
            verdicts.append({"sample_id": s.sample_id, "task": s.task_name,
                             "kind": s.kind, "verdict": "missing"})
            missing_total += 1
            continue
        if s.task_name == "color" and s.kind in ("deceptive_ex", "deceptive_pan"):
            v = judge.verdict(s, pred)
            verdict = "unscored" if v is None else ("correct" if v else "incorrect")
            if v is None:
                incomplete = True
        elif s.task_name in ("counting", "resolution", "geometry", "grounding", "vectorize", "multilabel"):
            verdict = "scored"
        else:
            verdict = "correct" if matches(pred, s) else "incorrect"
        verdicts.append({"sample_id": s.sample_id, "task": s.task_name,
                         "kind": s.kind, "verdict": verdict})
    for section in per_task.values():
        if section.get("unscored"):
            incomplete = True
    return ScoreReport(per_task=per_task, verdicts=verdicts,
                       missing=missing_total, incomplete=incomplete)
