"""Versatile task-suite generation: counting, image attributes, geometry,
building vectorizing, multi-label and scene classification, plus passthrough
conversion of VQA and visual-grounding source records.

Open-ended numeric answers use fixed renderings (2 decimals for resolution,
1 for geometry) and grounding/vectorizing coordinates are integers scaled to
a 0..scale-1 normalized frame, so matching-based evaluation is well defined.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .geometry import GeometryError, obb_dims
from .ingest import AnnotatedImage
from .samples import InstructionSample, derive_rng, render_choices

MODALITY_CHOICES = ("optical", "panchromatic", "sar", "infrared")

COUNT_TEMPLATES = (
    "How many {category} objects are in this image?",
    "Count the {category} instances in the image.",
    "What is the number of {category} objects shown?",
    "How many instances of {category} can you find in this image?",
    "State the count of {category} objects in the image.",
)

MODALITY_TEMPLATES = (
    "What is the imaging modality of this picture?",
    "Which sensor modality produced this image?",
    "Identify the modality of this remote sensing image.",
    "What type of imagery is this?",
    "Which imaging modality does this image belong to?",
)

RESOLUTION_TEMPLATES = (
    "What is the spatial resolution of this image in meters per pixel?",
    "State the ground sample distance of this image in meters.",
    "How many meters does one pixel of this image cover?",
    "Give the spatial resolution of the image in meters per pixel.",
    "What ground sample distance was this image acquired at, in meters?",
)

GEOMETRY_TEMPLATES = (
    "What are the length and width of the {category} in meters?",
    "Measure the {category}: give its length and width in meters.",
    "How long and how wide is the {category}, in meters?",
    "State the physical length and width of the {category} in meters.",
    "Give the dimensions of the {category} in meters.",
)

VECTORIZE_TEMPLATES = (
    "Extract the outline of every building in this image as vertex sequences.",
    "List the polygon vertices of all buildings in the image.",
    "Vectorize the buildings: output one vertex sequence per building.",
    "Trace each building footprint in the image as a polygon.",
    "Output the building outlines as sequences of vertices.",
)

MULTILABEL_TEMPLATES = (
    "Which of the following land-cover classes appear in this image: {vocabulary}?",
    "From the classes {vocabulary}, list every one present in the image.",
    "Select all land-cover classes visible in this image from: {vocabulary}.",
    "Which classes among {vocabulary} does this image contain?",
    "List the land-cover classes present in the image, choosing from {vocabulary}.",
)

SCENE_TEMPLATES = (
    "Which scene category best describes this image?",
    "Classify the scene shown in this image.",
    "What scene class does this image belong to?",
    "Identify the scene category of this image.",
    "Assign this image to its scene class.",
)

GROUNDING_TEMPLATES = (
    "Locate the object described by: {expression}. Answer with its bounding box.",
    "Find the bounding box of: {expression}.",
    "Where is the following object: {expression}? Give its box coordinates.",
    "Ground this expression in the image and return the box: {expression}.",
    "Output the bounding box for: {expression}.",
)

VARIOUS_TASK_IDS = {
    "counting": "IT",
    "modality": "IT",
    "resolution": "IT",
    "geometry": "IT",
    "vectorize": "IT",
    "multilabel": "IT",
    "scene": "CLS",
    "vqa": "VQA",
    "grounding": "VG",
}


class SkipImage(Exception):
    pass


def paper_various_targets() -> dict[str, int]:
    """Train-sample targets pinned by the 'paper' preset."""
    return {
        "counting": 7000,
        "modality": 400,
        "resolution": 3000,
        "geometry": 3000,
        "vectorize": 10000,
        "multilabel": 2000,
        "scene": 14045,
        "vqa": 10000,
        "grounding": 27000,
    }


@dataclass
class VariousConfig:
    targets: dict = field(default_factory=paper_various_targets)
    seed: int = 0
    coordinate_scale: int = 1000
    scene_choices: str = "all"  # "all" or an integer count rendered as string
    building_category: str = "building"

    def __post_init__(self):
        for task, n in self.targets.items():
            if n < 0:
                raise ValueError(f"negative target for {task}")
        if self.coordinate_scale <= 0:
            raise ValueError("coordinate scale must be positive")
        if self.scene_choices != "all":
            try:
                if int(self.scene_choices) < 2:
                    raise ValueError
            except (TypeError, ValueError):
                raise ValueError(
                    f'scene_choices must be "all" or an integer >= 2, got {self.scene_choices!r}'
                ) from None


def scale_coord(value: float, extent: float, scale: int) -> int:
    """Map a pixel coordinate into the integer 0..scale-1 normalized frame."""
    if extent <= 0:
        raise GeometryError("non-positive image extent")
    scaled = int((float(value) * scale) / extent)
    return min(max(scaled, 0), scale - 1)


def render_vertices(footprint, width: float, height: float, scale: int) -> str:
    pts = ",".join(
        f"({scale_coord(x, width, scale)},{scale_coord(y, height, scale)})"
        for x, y in footprint
    )
    return "{" + pts + "}"


def parse_vertex_answer(text: str) -> list[list[tuple[int, int]]]:
    """Inverse of the vectorize answer rendering; tolerant of whitespace."""
    import re

    polygons = []
    for chunk in re.findall(r"\{([^{}]*)\}", text):
        pts = re.findall(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)", chunk)
        if pts:
            polygons.append([(int(x), int(y)) for x, y in pts])
    return polygons


def _prov(seed: int, index: int, extra: Optional[dict] = None) -> dict:
    prov = {"generator": "variousgen", "seed": seed, "index": index, "strategy": "-"}
    if extra:
        prov.update(extra)
    return prov


def _mk(task: str, index: int, image_id: str, question: str, answer: str,
        seed: int, choices=None, extra=None) -> InstructionSample:
    return InstructionSample(
        sample_id=f"various-{task}-{index:06d}",
        image_id=image_id,
        task_id=VARIOUS_TASK_IDS[task],
        task_name=task,
        kind="plain",
        question=question,
        answer=answer,
        choices=tuple(choices) if choices is not None else None,
        provenance=_prov(seed, index, extra),
    )


def gen_counting(image: AnnotatedImage, rng, *, seed: int, index: int) -> InstructionSample:
    present = sorted(image.categories())
    if not present:
        raise SkipImage("no instances to count")
    category = rng.choice(present)
    count = len(image.instances_of(category))
    question = rng.choice(COUNT_TEMPLATES).format(category=category)
    return _mk("counting", index, image.image_id, question, str(count), seed,
               extra={"category": category})


def gen_modality(image: AnnotatedImage, rng, *, seed: int, index: int) -> InstructionSample:
    if image.modality not in MODALITY_CHOICES:
        raise SkipImage("modality unknown")
    options = list(MODALITY_CHOICES)
    rng.shuffle(options)
    question = rng.choice(MODALITY_TEMPLATES) + render_choices(options)
    return _mk("modality", index, image.image_id, question, image.modality, seed,
               choices=options)


def gen_resolution(image: AnnotatedImage, rng, *, seed: int, index: int) -> InstructionSample:
    if image.gsd is None:
        raise SkipImage("missing gsd")
    question = rng.choice(RESOLUTION_TEMPLATES)
    return _mk("resolution", index, image.image_id, question, f"{image.gsd:.2f}", seed)


def gen_geometric(image: AnnotatedImage, rng, *, seed: int, index: int) -> InstructionSample:
    if image.gsd is None:
        raise SkipImage("missing gsd")
    easy = image.easy_instances()
    if len(easy) != 1:
        raise SkipImage("needs a single unambiguous instance")
    inst = easy[0]
    try:
        length, width = obb_dims(inst.footprint, image.gsd)
    except GeometryError as exc:
        raise SkipImage(str(exc))
    question = rng.choice(GEOMETRY_TEMPLATES).format(category=inst.category)
    answer = f"length {length:.1f} m, width {width:.1f} m"
    return _mk("geometry", index, image.image_id, question, answer, seed,
               extra={"category": inst.category})


def gen_vectorize(image: AnnotatedImage, rng, *, seed: int, index: int,
                  scale: int = 1000, building_category: str = "building") -> InstructionSample:
    buildings = image.instances_of(building_category)
    if not buildings:
        raise SkipImage("no building polygons")

    def top_left_key(inst):
        sy, sx = min((y, x) for x, y in inst.footprint)
        return (sy, sx)

    ordered = sorted(buildings, key=top_left_key)
    answer = "; ".join(
        render_vertices(inst.footprint, image.width, image.height, scale)
        for inst in ordered
    )
    question = rng.choice(VECTORIZE_TEMPLATES)
    return _mk("vectorize", index, image.image_id, question, answer, seed,
               extra={"buildings": len(ordered)})


def gen_multilabel(image: AnnotatedImage, rng, *, seed: int, index: int,
                   vocabulary: Sequence[str]) -> InstructionSample:
    if not image.scene_labels:
        raise SkipImage("no scene labels")
    labels = sorted(set(image.scene_labels))
    question = rng.choice(MULTILABEL_TEMPLATES).format(vocabulary=", ".join(vocabulary))
    return _mk("multilabel", index, image.image_id, question, ", ".join(labels), seed)


def gen_scene(image: AnnotatedImage, rng, *, seed: int, index: int,
              vocabulary: Sequence[str], choices_mode: str = "all") -> InstructionSample:
    labels = sorted(set(image.scene_labels))
    if len(labels) != 1:
        raise SkipImage("scene classification needs exactly one label")
    answer = labels[0]
    if choices_mode == "all":
        options = list(vocabulary)
    else:
        k = max(2, int(choices_mode))
        distractors = rng.sample([c for c in vocabulary if c != answer], min(k - 1, len(vocabulary) - 1))
        options = [answer] + distractors
        rng.shuffle(options)
    question = (
        rng.choice(SCENE_TEMPLATES)
        + " Choose one of: "
        + ", ".join(options)
        + "."
    )
    return _mk("scene", index, image.image_id, question, answer, seed, choices=options)


def convert_vqa(records: Sequence[dict], config: VariousConfig) -> list[InstructionSample]:
    """Passthrough conversion of question/answer/type source records."""
    out = []
    target = config.targets.get("vqa", len(records))
    for index, rec in enumerate(records[:target] if target else records):
        out.append(
            _mk(
                "vqa",
                index,
                str(rec.get("image_id", f"vqa-{index}")),
                str(rec["question"]),
                str(rec["answer"]),
                config.seed,
                extra={"type": rec.get("type", "")},
            )
        )
    return out


def convert_grounding(records: Sequence[dict], config: VariousConfig) -> tuple[list[InstructionSample], list[str]]:
    """Expression + box records rendered into scaled-integer box answers.

    When the target exceeds the source size, records are cycled so every
    record appears floor or ceil(target/len) times, each copy with a fresh
    sample id (training-set duplication).
    """
    warnings: list[str] = []
    out: list[InstructionSample] = []
    target = config.targets.get("grounding", len(records))
    if not records or target == 0:
        return out, warnings
    for index in range(target):
        rec = records[index % len(records)]
        width = float(rec.get("width", 0))
        height = float(rec.get("height", 0))
        x1, y1, x2, y2 = [float(v) for v in rec["box"]]
        if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
            warnings.append(f"grounding record {index % len(records)}: box outside image, clamped")
            x1, x2 = max(0.0, x1), min(width, x2)
            y1, y2 = max(0.0, y1), min(height, y2)
        scale = config.coordinate_scale
        answer = "[{},{},{},{}]".format(
            scale_coord(x1, width, scale),
            scale_coord(y1, height, scale),
            scale_coord(x2, width, scale),
            scale_coord(y2, height, scale),
        )
        rng = derive_rng(config.seed, str(rec.get("image_id", "")), "grounding", index)
        question = rng.choice(GROUNDING_TEMPLATES).format(expression=str(rec["expression"]))
        out.append(
            _mk(
                "grounding",
                index,
                str(rec.get("image_id", f"grounding-{index}")),
                question,
                answer,
                config.seed,
                extra={"source_record": index % len(records)},
            )
        )
    return out, warnings


@dataclass
class VariousBuild:
    samples: list
    report: dict


_CORPUS_TASKS = ("counting", "modality", "resolution", "geometry", "vectorize", "multilabel", "scene")


def build_various(
    corpus: Sequence[AnnotatedImage],
    config: VariousConfig,
    vqa_records: Optional[Sequence[dict]] = None,
    grounding_records: Optional[Sequence[dict]] = None,
) -> VariousBuild:
    """Generate the task suite; one sample per image per task, in a
    deterministic per-task pool order (same contract as the honest builder)."""
    by_id = {img.image_id: img for img in corpus}
    vocabulary = sorted({l for img in corpus for l in img.scene_labels})
    samples: list[InstructionSample] = []
    skip_counts: Counter = Counter()
    shortfalls: dict[str, tuple[int, int]] = {}
    counts: dict[str, int] = {}
    warnings: list[str] = []

    for task in _CORPUS_TASKS:
        target = config.targets.get(task, 0)
        counts[task] = 0
        if target == 0:
            continue
        ids = sorted(by_id)
        derive_rng(config.seed, "", f"pool:{task}", 0).shuffle(ids)
        produced = 0
        for image_id in ids:
            if produced == target:
                break
            image = by_id[image_id]
            rng = derive_rng(config.seed, image_id, task, produced)
            try:
                if task == "counting":
                    sample = gen_counting(image, rng, seed=config.seed, index=produced)
                elif task == "modality":
                    sample = gen_modality(image, rng, seed=config.seed, index=produced)
                elif task == "resolution":
                    sample = gen_resolution(image, rng, seed=config.seed, index=produced)
                elif task == "geometry":
                    sample = gen_geometric(image, rng, seed=config.seed, index=produced)
                elif task == "vectorize":
                    sample = gen_vectorize(
                        image, rng, seed=config.seed, index=produced,
                        scale=config.coordinate_scale,
                        building_category=config.building_category,
                    )
                elif task == "multilabel":
                    sample = gen_multilabel(
                        image, rng, seed=config.seed, index=produced, vocabulary=vocabulary
                    )
                else:
                    sample = gen_scene(
                        image, rng, seed=config.seed, index=produced,
                        vocabulary=vocabulary, choices_mode=config.scene_choices,
                    )
            except SkipImage as exc:
                skip_counts[f"{task}: {exc}"] += 1
                continue
            samples.append(sample)
            produced += 1
        counts[task] = produced
        if produced < target:
            shortfalls[task] = (produced, target)

    if vqa_records is not None and config.targets.get("vqa", 0) > 0:
        converted = convert_vqa(list(vqa_records), config)
        samples.extend(converted)
        counts["vqa"] = len(converted)
        if len(converted) < config.targets["vqa"]:
            shortfalls["vqa"] = (len(converted), config.targets["vqa"])
    if grounding_records is not None and config.targets.get("grounding", 0) > 0:
        converted, ground_warnings = convert_grounding(list(grounding_records), config)
        warnings.extend(ground_warnings)
        samples.extend(converted)
        counts["grounding"] = len(converted)

    report = {
        "seed": config.seed,
        "targets": dict(sorted(config.targets.items())),
        "counts": dict(sorted(counts.items())),
        "skips": dict(sorted(skip_counts.items())),
        "shortfalls": {k: list(v) for k, v in sorted(shortfalls.items())},
        "warnings": warnings,
        "coordinate_scale": config.coordinate_scale,
    }
    return VariousBuild(samples=samples, report=report)
