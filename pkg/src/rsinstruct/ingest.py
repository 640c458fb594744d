"""Annotation ingestion: parsers for supported formats and corpus statistics.

Every parser is a pure function from file contents to the normalized corpus
model (`AnnotatedImage`/`ObjectInstance`). Malformed input is collected as
`ParseIssue` records and returned alongside the parsed data instead of being
silently dropped.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .geometry import Box, bbox_of, clamp_footprint

MODALITIES = ("optical", "panchromatic", "sar", "infrared", "unknown")

SUPPORTED_FORMATS = ("dota", "coco-polygons", "corpus-jsonl")

# DOTA-style headers we recognise and skip (gsd may override the default).
_DOTA_HEADER_KEYWORDS = ("imagesource", "gsd")


class ConfigError(ValueError):
    """Fatal manifest/configuration problem."""


@dataclass(frozen=True)
class ParseIssue:
    source: str
    message: str
    line: Optional[int] = None

    def __str__(self) -> str:
        loc = f"{self.source}:{self.line}" if self.line is not None else self.source
        return f"{loc}: {self.message}"


def normalize_category(name: str) -> str:
    """Lowercase + single internal spaces; dashes/underscores become spaces."""
    cleaned = re.sub(r"[\s_\-]+", " ", name.strip().lower())
    return cleaned


@dataclass(frozen=True)
class ObjectInstance:
    category: str
    footprint: tuple[tuple[float, float], ...]
    difficulty: int = 0

    def __post_init__(self):
        if not self.category:
            raise ValueError("instance category must be non-empty")
        normalized = normalize_category(self.category)
        if normalized != self.category:
            object.__setattr__(self, "category", normalized)
        if len(self.footprint) < 3:
            raise ValueError(f"footprint needs >=3 vertices, got {len(self.footprint)}")

    @property
    def bbox(self) -> Box:
        return bbox_of(self.footprint)


@dataclass(frozen=True)
class AnnotatedImage:
    image_id: str
    uri: str
    width: float
    height: float
    modality: str = "unknown"
    gsd: Optional[float] = None
    scene_labels: tuple[str, ...] = ()
    instances: tuple[ObjectInstance, ...] = ()
    source: str = ""

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id}: non-positive dimensions")
        if self.gsd is not None and self.gsd <= 0:
            raise ValueError(f"image {self.image_id}: gsd must be positive")
        if self.modality not in MODALITIES:
            raise ValueError(f"image {self.image_id}: unknown modality {self.modality!r}")

    def categories(self, include_difficult: bool = True) -> set[str]:
        return {
            inst.category
            for inst in self.instances
            if include_difficult or inst.difficulty < 1
        }

    def easy_instances(self) -> list[ObjectInstance]:
        return [inst for inst in self.instances if inst.difficulty < 1]

    def instances_of(self, category: str, include_difficult: bool = True) -> list[ObjectInstance]:
        return [
            inst
            for inst in self.instances
            if inst.category == category and (include_difficult or inst.difficulty < 1)
        ]


@dataclass(frozen=True)
class ImageMeta:
    """Per-file context a parser cannot recover from the annotation text."""
    image_id: str
    width: float
    height: float
    uri: str = ""
    modality: str = "unknown"
    gsd: Optional[float] = None
    source: str = ""
    label_map: dict[str, str] = field(default_factory=dict, hash=False)


def _mapped_category(raw: str, label_map: dict[str, str]) -> str:
    name = normalize_category(raw)
    return normalize_category(label_map[name]) if name in label_map else name


def parse_dota(text: str, meta: ImageMeta) -> tuple[AnnotatedImage, list[ParseIssue]]:
    """Parse DOTA-style annotation text: 8 coords, category, difficulty per line.

    Header lines starting with a known keyword are skipped; a parsable
    ``gsd:<value>`` header overrides the manifest default. An empty file is a
    valid image with zero instances.
    """
    issues: list[ParseIssue] = []
    instances: list[ObjectInstance] = []
    gsd = meta.gsd
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        keyword = line.split(":", 1)[0].strip().lower()
        if ":" in line and keyword in _DOTA_HEADER_KEYWORDS:
            if keyword == "gsd":
                try:
                    value = float(line.split(":", 1)[1])
                    if value > 0:
                        gsd = value
                except ValueError:
                    pass  # 'gsd:null' and friends; keep the default
            continue
        tokens = line.split()
        if len(tokens) < 10:
            issues.append(ParseIssue(meta.image_id, f"expected 8 coordinates + category + difficulty, got {len(tokens)} tokens", lineno))
            continue
        try:
            coords = [float(t) for t in tokens[:8]]
        except ValueError:
            issues.append(ParseIssue(meta.image_id, f"non-numeric coordinate in {tokens[:8]}", lineno))
            continue
        category = _mapped_category(" ".join(tokens[8:-1]), meta.label_map)
        try:
            difficulty = int(tokens[-1])
        except ValueError:
            issues.append(ParseIssue(meta.image_id, f"non-integer difficulty {tokens[-1]!r}", lineno))
            continue
        footprint = [(coords[i], coords[i + 1]) for i in range(0, 8, 2)]
        clamped, moved = clamp_footprint(footprint, meta.width, meta.height)
        if moved:
            issues.append(ParseIssue(meta.image_id, f"clamped out-of-bounds footprint for {category!r}", lineno))
        instances.append(ObjectInstance(category, tuple(clamped), difficulty))
    image = AnnotatedImage(
        image_id=meta.image_id,
        uri=meta.uri,
        width=meta.width,
        height=meta.height,
        modality=meta.modality,
        gsd=gsd,
        instances=tuple(instances),
        source=meta.source,
    )
    return image, issues


def render_dota(image: AnnotatedImage) -> str:
    """Inverse of parse_dota for round-trip checks and synthetic corpora."""
    lines = []
    if image.gsd is not None:
        lines.append(f"gsd:{_fmt(image.gsd)}")
    for inst in image.instances:
        coords = " ".join(_fmt(c) for xy in inst.footprint for c in xy)
        lines.append(f"{coords} {inst.category.replace(' ', '-')} {inst.difficulty}")
    return "\n".join(lines) + ("\n" if lines else "")


def _fmt(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def parse_coco_polygons(
    document: dict,
    *,
    modality: str = "optical",
    gsd: Optional[float] = None,
    source: str = "",
    default_category: str = "building",
    label_map: Optional[dict[str, str]] = None,
) -> tuple[list[AnnotatedImage], list[ParseIssue]]:
    """Parse a COCO-style polygon document into grouped AnnotatedImages.

    Annotations referencing unknown image ids, odd-length vertex lists and
    sub-triangle polygons are rejected with per-record issues.
    """
    issues: list[ParseIssue] = []
    label_map = label_map or {}
    cat_names = {
        c.get("id"): normalize_category(str(c.get("name", default_category)))
        for c in document.get("categories", [])
    }
    by_image: dict = {}
    grouped: dict[object, list[ObjectInstance]] = {}
    order: list = []
    for rec in document.get("images", []):
        img_id = rec.get("id")
        if img_id in by_image:
            issues.append(ParseIssue(source or "coco", f"duplicate image id {img_id}"))
            continue
        by_image[img_id] = rec
        grouped[img_id] = []
        order.append(img_id)
    for idx, ann in enumerate(document.get("annotations", [])):
        img_id = ann.get("image_id")
        if img_id not in by_image:
            issues.append(ParseIssue(source or "coco", f"annotation {idx} references unknown image id {img_id}"))
            continue
        seg = ann.get("segmentation")
        if isinstance(seg, list) and seg and isinstance(seg[0], list):
            seg = seg[0]
        if not isinstance(seg, list):
            issues.append(ParseIssue(source or "coco", f"annotation {idx}: missing vertex list"))
            continue
        if len(seg) % 2 != 0:
            issues.append(ParseIssue(source or "coco", f"annotation {idx}: odd vertex list of length {len(seg)}"))
            continue
        if len(seg) < 6:
            issues.append(ParseIssue(source or "coco", f"annotation {idx}: polygon has fewer than 3 vertices"))
            continue
        try:
            flat = [float(v) for v in seg]
        except (TypeError, ValueError):
            issues.append(ParseIssue(source or "coco", f"annotation {idx}: non-numeric vertex"))
            continue
        rec = by_image[img_id]
        footprint = [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]
        clamped, moved = clamp_footprint(footprint, rec.get("width", 0), rec.get("height", 0))
        if moved:
            issues.append(ParseIssue(source or "coco", f"annotation {idx}: clamped out-of-bounds polygon"))
        category = cat_names.get(ann.get("category_id"), normalize_category(default_category))
        if category in label_map:
            category = normalize_category(label_map[category])
        grouped[img_id].append(ObjectInstance(category, tuple(clamped)))
    images = []
    for img_id in order:
        rec = by_image[img_id]
        images.append(
            AnnotatedImage(
                image_id=str(img_id),
                uri=str(rec.get("file_name", "")),
                width=float(rec.get("width", 0)),
                height=float(rec.get("height", 0)),
                modality=modality,
                gsd=gsd,
                instances=tuple(grouped[img_id]),
                source=source,
            )
        )
    return images, issues


# --- native corpus serialization (one image per JSON line) ---

def image_to_dict(image: AnnotatedImage) -> dict:
    rec = {
        "image_id": image.image_id,
        "uri": image.uri,
        "width": image.width,
        "height": image.height,
        "modality": image.modality,
        "gsd": image.gsd,
        "scene_labels": list(image.scene_labels),
        "source": image.source,
        "instances": [
            {
                "category": inst.category,
                "footprint": [[x, y] for x, y in inst.footprint],
                "difficulty": inst.difficulty,
            }
            for inst in image.instances
        ],
    }
    return rec


def image_from_dict(rec: dict) -> AnnotatedImage:
    return AnnotatedImage(
        image_id=str(rec["image_id"]),
        uri=str(rec.get("uri", "")),
        width=float(rec["width"]),
        height=float(rec["height"]),
        modality=rec.get("modality", "unknown"),
        gsd=rec.get("gsd"),
        scene_labels=tuple(rec.get("scene_labels", ())),
        instances=tuple(
            ObjectInstance(
                category=normalize_category(i["category"]),
                footprint=tuple((float(x), float(y)) for x, y in i["footprint"]),
                difficulty=int(i.get("difficulty", 0)),
            )
            for i in rec.get("instances", ())
        ),
        source=rec.get("source", ""),
    )


def write_corpus_jsonl(images: Iterable[AnnotatedImage], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image in images:
            fh.write(json.dumps(image_to_dict(image), ensure_ascii=False) + "\n")


def read_corpus_jsonl(path: Path, source: str = "") -> tuple[list[AnnotatedImage], list[ParseIssue]]:
    images = []
    issues = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                image = image_from_dict(rec)
            except (ValueError, KeyError, TypeError) as exc:
                issues.append(ParseIssue(str(path), f"bad corpus record: {exc}", lineno))
                continue
            if source and not image.source:
                image = replace(image, source=source)
            images.append(image)
    return images, issues


# --- co-occurrence statistics ---

@dataclass
class CoOccurrenceMatrix:
    categories: list[str]
    counts: dict[str, dict[str, int]]
    presence_counts: dict[str, int]

    def count(self, a: str, b: str) -> int:
        return self.counts.get(a, {}).get(b, 0)

    def presence(self, category: str) -> int:
        return self.presence_counts.get(category, 0)


def build_cooccurrence(corpus: Sequence[AnnotatedImage]) -> CoOccurrenceMatrix:
    """Image-level category co-occurrence; duplicates within an image count once."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    categories = sorted({c for image in corpus for c in image.categories()})
    counts = {a: {b: 0 for b in categories} for a in categories}
    presence = {c: 0 for c in categories}
    for image in corpus:
        present = sorted(image.categories())
        for i, a in enumerate(present):
            presence[a] += 1
            counts[a][a] += 1
            for b in present[i + 1:]:
                counts[a][b] += 1
                counts[b][a] += 1
    return CoOccurrenceMatrix(categories, counts, presence)


# --- manifest ---

@dataclass(frozen=True)
class SourceSpec:
    format: str
    path: str
    name: str = ""
    modality: str = "unknown"
    gsd: Optional[float] = None
    labels: tuple[str, ...] = ()
    label_map: dict[str, str] = field(default_factory=dict, hash=False)
    image_size: tuple[float, float] = (1024.0, 1024.0)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    split: str
    sources: tuple[SourceSpec, ...]
    path: Optional[Path] = None

    def label_universe(self) -> set[str]:
        return {normalize_category(l) for src in self.sources for l in src.labels}


def load_manifest(path: Path) -> DatasetManifest:
    """Load and validate a JSON manifest; unknown format tags are fatal."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict) or "sources" not in doc:
        raise ConfigError(f"manifest {path} must be an object with a 'sources' list")
    sources = []
    for idx, src in enumerate(doc["sources"]):
        fmt = src.get("format")
        if fmt not in SUPPORTED_FORMATS:
            raise ConfigError(
                f"source #{idx}: unknown format tag {fmt!r}; supported: {', '.join(SUPPORTED_FORMATS)}"
            )
        if "path" not in src:
            raise ConfigError(f"source #{idx}: missing 'path'")
        modality = src.get("modality", "unknown")
        if modality not in MODALITIES:
            raise ConfigError(f"source #{idx}: unknown modality {modality!r}")
        labels = tuple(normalize_category(l) for l in src.get("labels", ()))
        if "labels" in src and not labels:
            raise ConfigError(f"source #{idx}: label set must be non-empty when given")
        if fmt == "dota" and not labels:
            raise ConfigError(f"source #{idx}: dota sources must declare their label set")
        size = src.get("image_size", [1024, 1024])
        sources.append(
            SourceSpec(
                format=fmt,
                path=str(src["path"]),
                name=src.get("name", f"source{idx}"),
                modality=modality,
                gsd=src.get("gsd"),
                labels=labels,
                label_map={normalize_category(k): v for k, v in src.get("label_map", {}).items()},
                image_size=(float(size[0]), float(size[1])),
            )
        )
    return DatasetManifest(
        name=str(doc.get("name", path.stem)),
        split=str(doc.get("split", "train")),
        sources=tuple(sources),
        path=path,
    )


def resolve_corpus(manifest: DatasetManifest) -> tuple[list[AnnotatedImage], list[ParseIssue]]:
    """Load every declared source. Unreadable sources are recorded as issues
    and do not block the others; duplicate image ids keep the first record."""
    base = manifest.path.parent if manifest.path else Path(".")
    corpus: list[AnnotatedImage] = []
    issues: list[ParseIssue] = []
    seen: set[str] = set()

    def add(image: AnnotatedImage):
        if image.image_id in seen:
            issues.append(ParseIssue(image.source, f"duplicate image id {image.image_id!r}; keeping first"))
            return
        seen.add(image.image_id)
        corpus.append(image)

    for src in manifest.sources:
        path = Path(src.path)
        if not path.is_absolute():
            path = base / path
        try:
            if src.format == "dota":
                files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
                if not files:
                    issues.append(ParseIssue(src.name, f"no .txt files under {path}"))
                for file in files:
                    meta = ImageMeta(
                        image_id=file.stem,
                        uri=str(file.with_suffix(".png")),
                        width=src.image_size[0],
                        height=src.image_size[1],
                        modality=src.modality,
                        gsd=src.gsd,
                        source=src.name,
                        label_map=src.label_map,
                    )
                    image, file_issues = parse_dota(file.read_text(encoding="utf-8"), meta)
                    issues.extend(file_issues)
                    add(image)
            elif src.format == "coco-polygons":
                doc = json.loads(path.read_text(encoding="utf-8"))
                images, doc_issues = parse_coco_polygons(
                    doc, modality=src.modality, gsd=src.gsd, source=src.name, label_map=src.label_map
                )
                issues.extend(doc_issues)
                for image in images:
                    add(image)
            elif src.format == "corpus-jsonl":
                images, file_issues = read_corpus_jsonl(path, source=src.name)
                issues.extend(file_issues)
                for image in images:
                    add(image)
        except OSError as exc:
            issues.append(ParseIssue(src.name, f"unreadable source {path}: {exc}"))
        except json.JSONDecodeError as exc:
            issues.append(ParseIssue(src.name, f"source {path} is not valid JSON: {exc}"))
    return corpus, issues
