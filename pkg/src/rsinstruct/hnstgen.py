"""Honest-instruction dataset generation: four recognition tasks with factual
and deceptive variants over an annotated corpus.

Deceptive questions are premised on a false condition (a category absent from
the image, or a color query against a panchromatic image); their gold answers
are fixed refusal strings so evaluation has a stable reference.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .captioner import LlmClient
from .geometry import (
    DIRECTION_NAMES,
    REGION_NAMES,
    GeometryError,
    enlarge_box,
    nine_region,
    relative_direction,
)
from .ingest import AnnotatedImage, CoOccurrenceMatrix, ObjectInstance, build_cooccurrence
from .samples import (
    NONEXISTENCE_OPTION,
    InstructionSample,
    derive_rng,
    refusal_nonexistence,
    refusal_panchromatic,
    render_choices,
)

STRATEGIES = ("random", "popular", "adversarial")

PRESENCE_TEMPLATES = (
    "Is there a {category} in this image?",
    "Does the image contain any {category}?",
    "Can you see a {category} anywhere in this image?",
    "Are any {category} objects visible in the image?",
    "Does this scene include a {category}?",
)

COLOR_TEMPLATES = (
    "What color is the {category} in this image?",
    "What is the color of the {category}?",
    "Tell me the color of the {category} shown in the image.",
    "Which color does the {category} in this image have?",
    "Describe the color of the {category} in the image.",
)

ABS_TEMPLATES = (
    "Which region of the image contains the {category}?",
    "Where is the {category} located in this image?",
    "In which part of the image does the {category} appear?",
    "Identify the region of the image where the {category} sits.",
    "Which of the nine image regions holds the {category}?",
)

REL_TEMPLATES = (
    "Where is the {a} relative to the {b} in this image?",
    "What is the position of the {a} with respect to the {b}?",
    "In which direction from the {b} does the {a} lie?",
    "Relative to the {b}, where does the {a} appear?",
    "How is the {a} positioned relative to the {b}?",
)


class SkipImage(Exception):
    """This image cannot yield the requested sample; the reason is recorded."""


class UnsatisfiableTargets(RuntimeError):
    def __init__(self, shortfalls: dict):
        lines = [
            f"  {task}/{kind} {split}: got {got}, wanted {want}"
            for (task, kind, split), (got, want) in sorted(shortfalls.items())
        ]
        super().__init__("targets unsatisfiable even after down-scaling:\n" + "\n".join(lines))
        self.shortfalls = shortfalls


def paper_targets() -> dict[str, dict[str, tuple[int, int]]]:
    """Per-task (train, test) sample targets pinned by the 'paper' preset."""
    return {
        "presence": {"plain": (8000, 242)},
        "color": {
            "factual": (8000, 200),
            "deceptive_ex": (4000, 300),
            "deceptive_pan": (1000, 100),
        },
        "absolute_position": {"factual": (8000, 100), "deceptive_ex": (4000, 300)},
        "relative_position": {"factual": (8000, 100), "deceptive_ex": (4000, 300)},
    }


def scaled_targets(scale: float) -> dict[str, dict[str, tuple[int, int]]]:
    return {
        task: {
            kind: (int(math.floor(tr * scale)), int(math.floor(te * scale)))
            for kind, (tr, te) in kinds.items()
        }
        for task, kinds in paper_targets().items()
    }


@dataclass
class HnstConfig:
    targets: dict = field(default_factory=paper_targets)
    strategy_mix: dict = field(
        default_factory=lambda: {"random": 1 / 3, "popular": 1 / 3, "adversarial": 1 / 3}
    )
    popular_quantile: float = 0.2
    enlarge_factor: float = 1.2
    seed: int = 0

    def __post_init__(self):
        known = {}
        for task, kind in _POOL_ORDER:
            known.setdefault(task, set()).add(kind)
        for task, kinds in self.targets.items():
            if task not in known:
                raise ValueError(f"unknown task {task!r} in targets")
            for kind, (train, test) in kinds.items():
                if kind not in known[task]:
                    raise ValueError(f"unknown kind {kind!r} for task {task!r}")
                if train < 0 or test < 0:
                    raise ValueError(f"negative target for {task}/{kind}")
        total = sum(self.strategy_mix.get(s, 0.0) for s in STRATEGIES)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"strategy mix must sum to 1, got {total}")
        if not 0 < self.popular_quantile <= 1:
            raise ValueError("popular quantile must be in (0, 1]")


def select_absent_category(
    image: AnnotatedImage,
    strategy: str,
    cooccur: CoOccurrenceMatrix,
    rng,
    popular_quantile: float = 0.2,
    exclude: Sequence[str] = (),
) -> Optional[str]:
    """Pick a category absent from the image.

    random: uniform over absent categories. popular: uniform over absent
    members of the dominant set (top quantile by presence count; falls back
    to all absent when none qualify). adversarial: the absent category with
    the highest summed co-occurrence with the present ones, ties broken
    lexicographically. Returns None when every category is present.
    """
    present = image.categories()
    absent = sorted(set(cooccur.categories) - present - set(exclude))
    if not absent:
        return None
    if strategy == "random":
        return rng.choice(absent)
    if strategy == "popular":
        k = max(1, int(len(cooccur.categories) * popular_quantile))
        ranked = sorted(cooccur.categories, key=lambda c: (-cooccur.presence(c), c))
        dominant = set(ranked[:k])
        candidates = sorted(dominant & set(absent)) or absent
        return rng.choice(candidates)
    if strategy == "adversarial":
        def score(c: str) -> int:
            return sum(cooccur.count(c, p) for p in present)

        return min(absent, key=lambda c: (-score(c), c))
    raise ValueError(f"unknown strategy {strategy!r}")


def strategy_schedule(mix: dict, n: int) -> list[str]:
    """Deterministic largest-deficit schedule hitting the mix proportions."""
    allocated = {s: 0 for s in STRATEGIES}
    out = []
    for i in range(1, n + 1):
        best = min(
            STRATEGIES,
            key=lambda s: (-(mix.get(s, 0.0) * i - allocated[s]), STRATEGIES.index(s)),
        )
        allocated[best] += 1
        out.append(best)
    return out


def _single_easy_instance(image: AnnotatedImage) -> Optional[ObjectInstance]:
    easy = image.easy_instances()
    return easy[0] if len(easy) == 1 else None


def _relative_pair(image: AnnotatedImage) -> Optional[tuple[ObjectInstance, ObjectInstance]]:
    easy = image.easy_instances()
    if len(easy) != 2 or easy[0].category == easy[1].category:
        return None
    a, b = sorted(easy, key=lambda inst: inst.category)
    if a.bbox.center == b.bbox.center:
        return None
    return a, b


def _base_provenance(seed: int, split: str, index: int, strategy: str = "-") -> dict:
    return {
        "generator": "hnstgen",
        "seed": seed,
        "split": split,
        "index": index,
        "strategy": strategy,
    }


def gen_presence(
    image: AnnotatedImage,
    positive: bool,
    strategy: str,
    cooccur: CoOccurrenceMatrix,
    rng,
    *,
    sample_id: str,
    seed: int,
    split: str,
    index: int,
    popular_quantile: float = 0.2,
) -> InstructionSample:
    if positive:
        present = sorted(image.categories())
        if not present:
            raise SkipImage("no instances for a positive presence question")
        category = rng.choice(present)
        answer = "Yes"
        strategy_tag = "-"
    else:
        category = select_absent_category(image, strategy, cooccur, rng, popular_quantile)
        if category is None:
            raise SkipImage("no absent category")
        answer = "No"
        strategy_tag = strategy
    question = rng.choice(PRESENCE_TEMPLATES).format(category=category)
    prov = _base_provenance(seed, split, index, strategy_tag)
    prov["category"] = category
    prov["positive"] = positive
    return InstructionSample(
        sample_id=sample_id,
        image_id=image.image_id,
        task_id="IDK",
        task_name="presence",
        kind="plain",
        question=question,
        answer=answer,
        provenance=prov,
    )


def gen_color(
    image: AnnotatedImage,
    kind: str,
    strategy: str,
    cooccur: CoOccurrenceMatrix,
    rng,
    *,
    client: Optional[LlmClient] = None,
    enlarge_factor: float = 1.2,
    sample_id: str,
    seed: int,
    split: str,
    index: int,
    popular_quantile: float = 0.2,
) -> InstructionSample:
    prov = _base_provenance(seed, split, index, strategy if kind == "deceptive_ex" else "-")
    if kind == "factual":
        if image.modality != "optical":
            raise SkipImage("factual color requires an optical image")
        inst = _single_easy_instance(image)
        if inst is None:
            raise SkipImage("not a single-instance image")
        if client is None:
            raise ValueError("factual color generation needs an LLM client")
        crop = enlarge_box(inst.bbox, enlarge_factor, image.width, image.height)
        outcome = client.extract_color(image.uri or image.image_id, inst.category, crop)
        if not outcome.consistent:
            raise SkipImage("captioner color queries disagreed")
        category = inst.category
        answer = outcome.color
        prov["transcripts"] = list(outcome.transcript_ids)
    elif kind == "deceptive_ex":
        if image.modality == "panchromatic":
            raise SkipImage("panchromatic images feed the pan-deceptive pool")
        category = select_absent_category(image, strategy, cooccur, rng, popular_quantile)
        if category is None:
            raise SkipImage("no absent category")
        answer = refusal_nonexistence(category)
    elif kind == "deceptive_pan":
        if image.modality != "panchromatic":
            raise SkipImage("pan-deceptive color needs a panchromatic image")
        present = sorted(image.categories())
        if not present:
            raise SkipImage("no instances on the panchromatic image")
        category = rng.choice(present)
        answer = refusal_panchromatic(category)
    else:
        raise ValueError(f"unsupported color kind {kind!r}")
    prov["category"] = category
    question = rng.choice(COLOR_TEMPLATES).format(category=category)
    return InstructionSample(
        sample_id=sample_id,
        image_id=image.image_id,
        task_id="IDK",
        task_name="color",
        kind=kind,
        question=question,
        answer=answer,
        provenance=prov,
    )


def gen_abs_position(
    image: AnnotatedImage,
    factual: bool,
    strategy: str,
    cooccur: CoOccurrenceMatrix,
    rng,
    *,
    sample_id: str,
    seed: int,
    split: str,
    index: int,
    popular_quantile: float = 0.2,
) -> InstructionSample:
    prov = _base_provenance(seed, split, index, "-" if factual else strategy)
    if factual:
        inst = _single_easy_instance(image)
        if inst is None:
            raise SkipImage("not a single-instance image")
        region = nine_region(inst.bbox, image.width, image.height)
        category = inst.category
        distractors = rng.sample([r for r in REGION_NAMES if r != region], 3)
        options = [region] + distractors + [NONEXISTENCE_OPTION]
        answer = region
        prov["region"] = region
        kind = "factual"
    else:
        category = select_absent_category(image, strategy, cooccur, rng, popular_quantile)
        if category is None:
            raise SkipImage("no absent category")
        options = list(rng.sample(REGION_NAMES, 4)) + [NONEXISTENCE_OPTION]
        answer = NONEXISTENCE_OPTION
        kind = "deceptive_ex"
    prov["category"] = category
    rng.shuffle(options)
    question = rng.choice(ABS_TEMPLATES).format(category=category) + render_choices(options)
    return InstructionSample(
        sample_id=sample_id,
        image_id=image.image_id,
        task_id="IDK",
        task_name="absolute_position",
        kind=kind,
        question=question,
        answer=answer,
        choices=tuple(options),
        provenance=prov,
    )


def gen_rel_position(
    image: AnnotatedImage,
    factual: bool,
    strategy: str,
    cooccur: CoOccurrenceMatrix,
    rng,
    *,
    sample_id: str,
    seed: int,
    split: str,
    index: int,
    popular_quantile: float = 0.2,
) -> InstructionSample:
    prov = _base_provenance(seed, split, index, "-" if factual else strategy)
    if factual:
        pair = _relative_pair(image)
        if pair is None:
            raise SkipImage("needs exactly two single-instance categories")
        subject, reference = pair if rng.random() < 0.5 else (pair[1], pair[0])
        try:
            direction = relative_direction(subject.bbox.center, reference.bbox.center)
        except GeometryError:
            raise SkipImage("co-located centroids")
        distractors = rng.sample([d for d in DIRECTION_NAMES if d != direction], 3)
        options = [direction] + distractors + [NONEXISTENCE_OPTION]
        answer = direction
        prov.update(subject=subject.category, reference=reference.category, direction=direction)
        subj_name, ref_name = subject.category, reference.category
        kind = "factual"
    else:
        both_absent = rng.random() < 0.5
        first = select_absent_category(image, strategy, cooccur, rng, popular_quantile)
        if first is None:
            raise SkipImage("no absent category")
        if both_absent:
            second = select_absent_category(
                image, strategy, cooccur, rng, popular_quantile, exclude=(first,)
            )
            if second is None:
                both_absent = False  # only one category missing; ask against a present one
        if both_absent:
            subj_name, ref_name = first, second
            absent = [first, second]
        else:
            present = sorted(image.categories())
            if not present:
                raise SkipImage("empty image cannot anchor a one-absent question")
            subj_name, ref_name = first, rng.choice(present)
            absent = [first]
        options = list(rng.sample(DIRECTION_NAMES, 4)) + [NONEXISTENCE_OPTION]
        answer = NONEXISTENCE_OPTION
        prov.update(subject=subj_name, reference=ref_name, absent_categories=absent)
        kind = "deceptive_ex"
    rng.shuffle(options)
    question = rng.choice(REL_TEMPLATES).format(a=subj_name, b=ref_name) + render_choices(options)
    return InstructionSample(
        sample_id=sample_id,
        image_id=image.image_id,
        task_id="IDK",
        task_name="relative_position",
        kind=kind,
        question=question,
        answer=answer,
        choices=tuple(options),
        provenance=prov,
    )


# --- whole-dataset builder ---

_POOL_ORDER = (
    ("color", "deceptive_pan"),
    ("relative_position", "factual"),
    ("color", "factual"),
    ("absolute_position", "factual"),
    ("presence", "plain"),
    ("color", "deceptive_ex"),
    ("absolute_position", "deceptive_ex"),
    ("relative_position", "deceptive_ex"),
)


@dataclass
class HnstBuild:
    train: list
    test: list
    report: dict


def _eligible(image: AnnotatedImage, task: str, kind: str, n_categories: int) -> bool:
    has_absent = len(image.categories()) < n_categories
    if task == "presence":
        return bool(image.instances) and has_absent
    if task == "color":
        if kind == "factual":
            return image.modality == "optical" and _single_easy_instance(image) is not None
        if kind == "deceptive_ex":
            return has_absent and image.modality != "panchromatic"
        return image.modality == "panchromatic" and bool(image.instances)
    if task == "absolute_position":
        if kind == "factual":
            return _single_easy_instance(image) is not None
        return has_absent
    if task == "relative_position":
        if kind == "factual":
            return _relative_pair(image) is not None
        return has_absent
    raise ValueError(f"unknown task {task!r}")


def build_hnstd(
    corpus: Sequence[AnnotatedImage],
    config: HnstConfig,
    client: Optional[LlmClient] = None,
) -> HnstBuild:
    """Generate the full honest-instruction dataset.

    Output is a pure function of (config.seed, corpus): pool ordering and all
    per-sample randomness derive from stable hashes, so reruns and parallel
    schedules produce identical records. Train and test image sets are
    disjoint. When the corpus cannot satisfy the configured targets, all
    targets are scaled down proportionally once (with a warning in the
    report); remaining shortfalls raise UnsatisfiableTargets.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    cooccur = build_cooccurrence(corpus)
    n_categories = len(cooccur.categories)
    by_id = {img.image_id: img for img in corpus}
    if len(by_id) != len(corpus):
        raise ValueError("duplicate image ids in corpus")

    pools: dict[tuple[str, str], list[str]] = {}
    for task, kind in _POOL_ORDER:
        ids = sorted(
            img.image_id for img in corpus if _eligible(img, task, kind, n_categories)
        )
        derive_rng(config.seed, "", f"pool:{task}:{kind}", 0).shuffle(ids)
        pools[(task, kind)] = ids

    # Images the constrained factual pools depend on are scarce; unconstrained
    # pools consume them last so small eligibility classes are not starved.
    scarce = {
        img.image_id: (
            _single_easy_instance(img) is not None or _relative_pair(img) is not None
        )
        for img in corpus
    }

    def attempt(targets: dict) -> tuple[Optional[dict], dict, dict]:
        split_of: dict[str, str] = {}
        out = {"train": [], "test": []}
        skip_counts: Counter = Counter()
        strategy_counts: Counter = Counter()
        shortfalls: dict = {}
        for split, other in (("test", "train"), ("train", "test")):
            for task, kind in _POOL_ORDER:
                target = targets.get(task, {}).get(kind, (0, 0))[0 if split == "train" else 1]
                if target == 0:
                    continue
                needs_strategy = kind == "deceptive_ex" or task == "presence"
                schedule = (
                    strategy_schedule(config.strategy_mix, target)
                    if needs_strategy
                    else None
                )
                # Reuse images already assigned to this split before claiming
                # fresh ones, and claim abundant images before scarce ones:
                # both keep the train/test partition from starving later pools.
                base = pools[(task, kind)]
                candidates = (
                    [i for i in base if split_of.get(i) == split]
                    + [i for i in base if i not in split_of and not scarce[i]]
                    + [i for i in base if i not in split_of and scarce[i]]
                )
                produced = 0
                for image_id in candidates:
                    if produced == target:
                        break
                    image = by_id[image_id]
                    index = produced
                    rng = derive_rng(config.seed, image_id, f"{task}:{kind}", index)
                    sample_id = f"hnst-{task}-{kind}-{split}-{index:06d}"
                    kwargs = dict(
                        sample_id=sample_id,
                        seed=config.seed,
                        split=split,
                        index=index,
                        popular_quantile=config.popular_quantile,
                    )
                    try:
                        if task == "presence":
                            positive = index % 2 == 0
                            strategy = schedule[index // 2] if not positive else "random"
                            sample = gen_presence(
                                image, positive, strategy, cooccur, rng, **kwargs
                            )
                        elif task == "color":
                            strategy = schedule[index] if schedule else "random"
                            sample = gen_color(
                                image,
                                kind,
                                strategy,
                                cooccur,
                                rng,
                                client=client,
                                enlarge_factor=config.enlarge_factor,
                                **kwargs,
                            )
                        elif task == "absolute_position":
                            strategy = schedule[index] if schedule else "random"
                            sample = gen_abs_position(
                                image, kind == "factual", strategy, cooccur, rng, **kwargs
                            )
                        else:
                            strategy = schedule[index] if schedule else "random"
                            sample = gen_rel_position(
                                image, kind == "factual", strategy, cooccur, rng, **kwargs
                            )
                    except SkipImage as exc:
                        skip_counts[f"{task}/{kind}: {exc}"] += 1
                        continue
                    split_of[image_id] = split
                    strategy_counts[f"{task}/{kind}/{sample.provenance['strategy']}"] += 1
                    out[split].append(sample)
                    produced += 1
                if produced < target:
                    shortfalls[(task, kind, split)] = (produced, target)
        if shortfalls:
            return None, {"skips": skip_counts, "shortfalls": shortfalls}, {}
        return out, {"skips": skip_counts}, dict(strategy_counts)

    targets = config.targets
    out, info, strategies = attempt(targets)
    downscaled = None
    if out is None:
        worst = min(
            got / want for (got, want) in info["shortfalls"].values() if want > 0
        )
        if worst == 0.0:
            # some pool is empty; no proportional factor can help
            raise UnsatisfiableTargets(info["shortfalls"])
        downscaled = worst
        targets = {
            task: {
                kind: (int(math.floor(tr * worst)), int(math.floor(te * worst)))
                for kind, (tr, te) in kinds.items()
            }
            for task, kinds in config.targets.items()
        }
        out, info, strategies = attempt(targets)
        if out is None:
            raise UnsatisfiableTargets(info["shortfalls"])

    counts = {
        task: {
            kind: {
                "train": sum(
                    1 for s in out["train"] if s.task_name == task and s.kind == kind
                ),
                "test": sum(
                    1 for s in out["test"] if s.task_name == task and s.kind == kind
                ),
            }
            for kind in kinds
        }
        for task, kinds in targets.items()
    }
    report = {
        "seed": config.seed,
        "targets": {
            task: {kind: list(tt) for kind, tt in kinds.items()}
            for task, kinds in targets.items()
        },
        "counts": counts,
        "strategies": strategies,
        "skips": dict(sorted(info["skips"].items())),
        "downscaled": downscaled,
        "images": {
            "train": len({s.image_id for s in out["train"]}),
            "test": len({s.image_id for s in out["test"]}),
        },
    }
    return HnstBuild(train=out["train"], test=out["test"], report=report)


def audit_hnstd(samples: Sequence[InstructionSample], corpus: Sequence[AnnotatedImage]) -> list[str]:
    """Re-derive every checkable answer from the raw annotations.

    Returns a list of violation descriptions; an honest dataset yields [].
    """
    by_id = {img.image_id: img for img in corpus}
    violations = []
    for s in samples:
        image = by_id.get(s.image_id)
        if image is None:
            violations.append(f"{s.sample_id}: unknown image {s.image_id}")
            continue
        present = image.categories()
        if s.kind == "deceptive_ex":
            absent = s.provenance.get("absent_categories") or [s.provenance.get("category")]
            for cat in absent:
                if cat in present:
                    violations.append(f"{s.sample_id}: queried category {cat!r} is present")
            if s.choices is not None and s.answer != NONEXISTENCE_OPTION:
                violations.append(f"{s.sample_id}: deceptive answer is not the refusal option")
        elif s.kind == "deceptive_pan":
            if image.modality != "panchromatic":
                violations.append(f"{s.sample_id}: pan-deceptive on {image.modality} image")
            if s.provenance.get("category") not in present:
                violations.append(f"{s.sample_id}: pan-deceptive category not present")
        elif s.kind == "factual":
            if s.task_name == "absolute_position":
                inst = _single_easy_instance(image)
                if inst is None:
                    violations.append(f"{s.sample_id}: image no longer single-instance")
                    continue
                region = nine_region(inst.bbox, image.width, image.height)
                if region != s.answer:
                    violations.append(
                        f"{s.sample_id}: recomputed region {region!r} != answer {s.answer!r}"
                    )
            elif s.task_name == "relative_position":
                subj_cat = s.provenance.get("subject")
                ref_cat = s.provenance.get("reference")
                subj = image.instances_of(subj_cat, include_difficult=False)
                ref = image.instances_of(ref_cat, include_difficult=False)
                if len(subj) != 1 or len(ref) != 1:
                    violations.append(f"{s.sample_id}: queried pair not single-instance")
                    continue
                direction = relative_direction(subj[0].bbox.center, ref[0].bbox.center)
                if direction != s.answer:
                    violations.append(
                        f"{s.sample_id}: recomputed direction {direction!r} != {s.answer!r}"
                    )
            elif s.task_name == "color":
                if s.provenance.get("category") not in present:
                    violations.append(f"{s.sample_id}: factual color category not present")
                if len(s.provenance.get("transcripts", ())) != 2:
                    violations.append(f"{s.sample_id}: color sample lacks double transcripts")
        elif s.task_name == "presence":
            positive = s.provenance.get("positive")
            category = s.provenance.get("category")
            if positive and category not in present:
                violations.append(f"{s.sample_id}: positive presence on absent category")
            if not positive and category in present:
                violations.append(f"{s.sample_id}: negative presence on present category")
        if s.choices is not None:
            if len(s.choices) != 5 or len(set(s.choices)) != 5:
                violations.append(f"{s.sample_id}: choice set is not 5 distinct options")
            if s.answer not in s.choices:
                violations.append(f"{s.sample_id}: answer missing from choices")
    return violations
