"""Deterministic synthetic corpus generation.

Produces annotation-complete corpora shaped like the real object-detection
sources (rotated quadrilateral footprints, modalities, ground sample
distances, scene labels) plus VQA and grounding source files, sized so the
paper-preset dataset targets are satisfiable. No pixels are generated; image
URIs use the synthetic:// scheme.
"""
from __future__ import annotations

import json
import math
import random
from pathlib import Path

from .ingest import AnnotatedImage, ObjectInstance, write_corpus_jsonl

CATEGORIES = (
    "ship", "plane", "harbor", "bridge", "vehicle", "storage tank",
    "building", "helicopter", "roundabout", "basketball court",
    "tennis court", "swimming pool",
)

SCENE_CLASSES = (
    "residential", "industrial", "farmland", "forest", "water",
    "airport", "harbor area", "desert", "meadow", "parking lot",
)

_IMAGE_SIZES = (512.0, 800.0, 1024.0)

# Image archetype mix: tuned so the paper-preset targets fit a 20K corpus.
_PROFILE = (
    ("single", 0.46),   # one easy instance
    ("pair", 0.42),     # two categories, one instance each
    ("pan", 0.07),      # panchromatic, single instance
    ("multi", 0.05),    # 2-6 instances, several categories
)


def _quad(rng: random.Random, width: float, height: float,
          max_half: float = 80.0) -> tuple[tuple[float, float], ...]:
    """Rotated rectangle fully inside the image, vertices rounded to 0.1 px."""
    a = rng.uniform(8.0, max_half)
    b = rng.uniform(6.0, max(8.0, a * 0.8))
    theta = rng.uniform(0.0, math.pi)
    margin = math.hypot(a, b) + 1.0
    cx = rng.uniform(margin, width - margin)
    cy = rng.uniform(margin, height - margin)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    corners = ((a, b), (-a, b), (-a, -b), (a, -b))
    return tuple(
        (round(cx + dx * cos_t - dy * sin_t, 1), round(cy + dx * sin_t + dy * cos_t, 1))
        for dx, dy in corners
    )


def _pick_category(rng: random.Random, building_p: float, exclude: tuple[str, ...] = ()) -> str:
    if rng.random() < building_p and "building" not in exclude:
        return "building"
    options = [c for c in CATEGORIES if c != "building" and c not in exclude]
    return rng.choice(options)


def generate_corpus(n_images: int, seed: int) -> list[AnnotatedImage]:
    rng = random.Random(seed)
    images = []
    for i in range(n_images):
        kind = _weighted_kind(rng)
        size = rng.choice(_IMAGE_SIZES)
        width = height = size
        gsd = round(rng.uniform(0.1, 2.0), 2)
        modality = "panchromatic" if kind == "pan" else rng.choices(
            ("optical", "sar", "infrared"), weights=(0.92, 0.05, 0.03)
        )[0]
        instances: list[ObjectInstance] = []
        if kind in ("single", "pan"):
            category = _pick_category(rng, building_p=0.4 if kind == "single" else 0.3)
            instances.append(ObjectInstance(category, _quad(rng, width, height)))
            if kind == "single" and rng.random() < 0.03:
                # occasional hard extra instance; excluded from single-instance tasks
                instances.append(
                    ObjectInstance(_pick_category(rng, 0.2), _quad(rng, width, height), difficulty=1)
                )
        elif kind == "pair":
            first = _pick_category(rng, building_p=0.6)
            second = _pick_category(rng, building_p=0.0, exclude=(first,))
            instances.append(ObjectInstance(first, _quad(rng, width, height)))
            instances.append(ObjectInstance(second, _quad(rng, width, height)))
        else:
            n_inst = rng.randint(2, 6)
            cats = ["building"] + [
                _pick_category(rng, 0.1) for _ in range(n_inst - 1)
            ]
            for cat in cats:
                instances.append(ObjectInstance(cat, _quad(rng, width, height)))
        if rng.random() < 0.75:
            labels = (rng.choice(SCENE_CLASSES),)
        else:
            labels = tuple(sorted(rng.sample(SCENE_CLASSES, rng.randint(2, 3))))
        image_id = f"syn{i:06d}"
        images.append(
            AnnotatedImage(
                image_id=image_id,
                uri=f"synthetic://{image_id}",
                width=width,
                height=height,
                modality=modality,
                gsd=gsd,
                scene_labels=labels,
                instances=tuple(instances),
                source="synthetic",
            )
        )
    return images


def _weighted_kind(rng: random.Random) -> str:
    roll = rng.random()
    acc = 0.0
    for kind, weight in _PROFILE:
        acc += weight
        if roll < acc:
            return kind
    return _PROFILE[-1][0]


def generate_vqa_records(n: int, seed: int) -> list[dict]:
    rng = random.Random(seed + 1)
    kinds = ("presence", "comparison", "rural_urban", "count")
    out = []
    for i in range(n):
        kind = rng.choice(kinds)
        if kind == "presence":
            cat = rng.choice(CATEGORIES)
            q = f"Is a {cat} present in the image?"
            a = rng.choice(("yes", "no"))
        elif kind == "comparison":
            a_cat, b_cat = rng.sample(CATEGORIES, 2)
            q = f"Are there more {a_cat} objects than {b_cat} objects?"
            a = rng.choice(("yes", "no"))
        elif kind == "rural_urban":
            q = "Is this scene rural or urban?"
            a = rng.choice(("rural", "urban"))
        else:
            cat = rng.choice(CATEGORIES)
            q = f"How many {cat} objects are visible?"
            a = str(rng.randint(0, 12))
        out.append({"image_id": f"vqa{i:06d}", "question": q, "answer": a, "type": kind})
    return out


def generate_grounding_records(n: int, seed: int) -> list[dict]:
    rng = random.Random(seed + 2)
    out = []
    for i in range(n):
        width = height = 800.0
        w = rng.uniform(40, 300)
        h = rng.uniform(40, 300)
        x1 = rng.uniform(0, width - w)
        y1 = rng.uniform(0, height - h)
        cat = rng.choice(CATEGORIES)
        side = rng.choice(("left", "right", "upper", "lower", "central"))
        out.append(
            {
                "image_id": f"vg{i:06d}",
                "expression": f"the {side} {cat}",
                "box": [round(x1, 1), round(y1, 1), round(x1 + w, 1), round(y1 + h, 1)],
                "width": width,
                "height": height,
            }
        )
    return out


def write_synthetic_bundle(
    out_dir: Path,
    n_images: int,
    seed: int,
    vqa_n: int = 0,
    grounding_n: int = 0,
) -> dict:
    """Write corpus.jsonl + manifest.json (+ optional vqa/grounding sources)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(n_images, seed)
    corpus_path = out_dir / "corpus.jsonl"
    write_corpus_jsonl(corpus, corpus_path)
    manifest = {
        "name": f"synthetic-{seed}",
        "split": "train",
        "sources": [
            {
                "format": "corpus-jsonl",
                "path": "corpus.jsonl",
                "name": "synthetic",
                "modality": "unknown",
                "labels": list(CATEGORIES),
            }
        ],
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    paths = {"corpus": str(corpus_path), "manifest": str(manifest_path)}
    if vqa_n:
        vqa_path = out_dir / "vqa.jsonl"
        with open(vqa_path, "w", encoding="utf-8") as fh:
            for rec in generate_vqa_records(vqa_n, seed):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        paths["vqa"] = str(vqa_path)
    if grounding_n:
        g_path = out_dir / "grounding.jsonl"
        with open(g_path, "w", encoding="utf-8") as fh:
            for rec in generate_grounding_records(grounding_n, seed):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        paths["grounding"] = str(g_path)
    return paths
