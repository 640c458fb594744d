"""Command-line entry point: dataset generation, evaluation, synthetic
corpora, and the caption review service.

Exit codes: 0 success, 1 runtime failure (including unsatisfiable targets and
incomplete evaluations), 2 usage or configuration errors.
"""
from __future__ import annotations

import itertools
import json
import sys
from pathlib import Path

import click

from . import captioner as cap
from . import qareview, qaserver, synth
from .evalharness import PredictionError, RuleJudge, LlmJudge, evaluate_run, load_predictions
from .hnstgen import HnstConfig, UnsatisfiableTargets, build_hnstd, paper_targets, scaled_targets
from .ingest import ConfigError, load_manifest, resolve_corpus
from .samples import read_samples_jsonl, write_jsonl_atomic, write_samples_jsonl
from .variousgen import VariousConfig, build_various, paper_various_targets

# figures pull in matplotlib; imported on demand so non-plotting commands
# (notably `qa serve`) start quickly


def save_generation_figure(report, path, title):
    from .figures import save_generation_figure as impl

    impl(report, path, title)


def save_score_figure(report, path):
    from .figures import save_score_figure as impl

    impl(report, path)


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _load_corpus(manifest_path: str):
    try:
        manifest = load_manifest(Path(manifest_path))
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    corpus, issues = resolve_corpus(manifest)
    if issues:
        click.echo(f"[ingest] {len(issues)} issue(s); first: {issues[0]}", err=True)
    if not corpus:
        raise _fail("manifest resolved to an empty corpus")
    return manifest, corpus, issues


def _make_client(backend: str, out_dir: Path, rate: int = 1000, concurrency: int = 8) -> cap.LlmClient:
    if backend == "mock":
        tick = itertools.count()
        return cap.LlmClient(
            cap.MockBackend(),
            cache_dir=out_dir / ".cache",
            transcript_path=out_dir / "transcripts.jsonl",
            rate=10**6,  # offline backend: no budget to respect
            max_in_flight=concurrency,
            clock=lambda: float(next(tick)),  # logical clock keeps logs reproducible
            sleep=lambda s: None,
        )
    import os

    url = os.environ.get("RSINSTRUCT_BACKEND_URL")
    if not url:
        raise click.UsageError("live backend requires RSINSTRUCT_BACKEND_URL (and RSINSTRUCT_API_KEY)")
    return cap.LlmClient(
        cap.HttpBackend(url, model=os.environ.get("RSINSTRUCT_BACKEND_MODEL", "default")),
        cache_dir=out_dir / ".cache",
        transcript_path=out_dir / "transcripts.jsonl",
        rate=rate,
        max_in_flight=concurrency,
    )


def _guard_outputs(paths: list[Path], force: bool) -> None:
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        raise _fail(
            "refusing to overwrite existing outputs (pass --force): "
            + ", ".join(str(p) for p in existing)
        )


@click.group()
def main():
    """Remote-sensing instruction dataset toolkit."""


@main.command("synth-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--images", default=1000, show_default=True, help="Number of annotated images.")
@click.option("--seed", required=True, type=int)
@click.option("--vqa", "vqa_n", default=0, show_default=True, help="VQA source records to emit.")
@click.option("--grounding", "grounding_n", default=0, show_default=True, help="Grounding source records to emit.")
def synth_corpus(out_dir: Path, images: int, seed: int, vqa_n: int, grounding_n: int):
    """Write a deterministic synthetic corpus bundle (corpus + manifest)."""
    paths = synth.write_synthetic_bundle(out_dir, images, seed, vqa_n, grounding_n)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


@main.group()
def generate():
    """Dataset generation commands."""


@generate.command("hnst")
@click.option("--manifest", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", required=True, type=int)
@click.option("--preset", type=click.Choice(["paper"]), default="paper", show_default=True)
@click.option("--scale", type=float, default=None,
              help="Scale every preset target by this factor (e.g. 0.01 for smoke runs).")
@click.option("--backend", type=click.Choice(["mock", "live"]), default="mock", show_default=True)
@click.option("--concurrency", default=8, show_default=True,
              help="Max in-flight LLM requests.")
@click.option("--force", is_flag=True, help="Overwrite existing outputs.")
@click.option("--figures/--no-figures", "render_figures", default=True, show_default=True)
def generate_hnst(manifest, out_dir: Path, seed: int, preset: str, scale, backend: str,
                  concurrency: int, force: bool, render_figures: bool):
    """Generate the honest-instruction dataset (factual + deceptive)."""
    _, corpus, _ = _load_corpus(manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_path = out_dir / "hnst_train.jsonl"
    test_path = out_dir / "hnst_test.jsonl"
    report_path = out_dir / "hnst_report.json"
    _guard_outputs([train_path, test_path, report_path], force)
    targets = scaled_targets(scale) if scale is not None else paper_targets()
    config = HnstConfig(targets=targets, seed=seed)
    client = _make_client(backend, out_dir, concurrency=concurrency)
    try:
        build = build_hnstd(corpus, config, client)
    except UnsatisfiableTargets as exc:
        raise _fail(str(exc))
    write_samples_jsonl(build.train, train_path)
    write_samples_jsonl(build.test, test_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = report_path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(build.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(report_path)
    if render_figures:
        save_generation_figure(build.report, out_dir / "hnst_report.png", "honest dataset")
    for task, kinds in build.report["counts"].items():
        for kind, split_counts in kinds.items():
            click.echo(f"{task}/{kind}: train={split_counts['train']} test={split_counts['test']}")
    if build.report.get("downscaled"):
        click.echo(f"warning: targets downscaled by {build.report['downscaled']:.3f}", err=True)
    click.echo(f"wrote {train_path} and {test_path}")


@generate.command("various")
@click.option("--manifest", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", required=True, type=int)
@click.option("--scale", type=float, default=None, help="Scale preset targets.")
@click.option("--vqa-source", type=click.Path(path_type=Path), default=None)
@click.option("--grounding-source", type=click.Path(path_type=Path), default=None)
@click.option("--scene-choices", default="all", show_default=True,
              help='"all" embeds the full class list; an integer renders a k-way choice.')
@click.option("--coordinate-scale", default=1000, show_default=True)
@click.option("--force", is_flag=True)
@click.option("--figures/--no-figures", "render_figures", default=True, show_default=True)
@click.option("--allow-shortfall", is_flag=True,
              help="Exit 0 even when some task target could not be met.")
def generate_various(manifest, out_dir: Path, seed: int, scale, vqa_source, grounding_source,
                     scene_choices: str, coordinate_scale: int, force: bool,
                     render_figures: bool, allow_shortfall: bool):
    """Generate the versatile task suite (counting, attributes, geometry...)."""
    _, corpus, _ = _load_corpus(manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples_path = out_dir / "various_train.jsonl"
    report_path = out_dir / "various_report.json"
    _guard_outputs([samples_path, report_path], force)
    targets = paper_various_targets()
    if scale is not None:
        targets = {k: int(v * scale) for k, v in targets.items()}
    config = VariousConfig(
        targets=targets, seed=seed, coordinate_scale=coordinate_scale,
        scene_choices=scene_choices,
    )

    def _read_records(path):
        out = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    vqa_records = _read_records(vqa_source) if vqa_source else None
    grounding_records = _read_records(grounding_source) if grounding_source else None
    build = build_various(corpus, config, vqa_records, grounding_records)
    write_samples_jsonl(build.samples, samples_path)
    report_path.write_text(json.dumps(build.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if render_figures:
        save_generation_figure(build.report, out_dir / "various_report.png", "versatile task suite")
    for task, count in build.report["counts"].items():
        click.echo(f"{task}: {count}")
    if build.report["shortfalls"]:
        table = "; ".join(f"{t}: {got}/{want}" for t, (got, want) in build.report["shortfalls"].items())
        if allow_shortfall:
            click.echo(f"warning: shortfalls: {table}", err=True)
        else:
            raise _fail(f"targets unsatisfied: {table}")
    click.echo(f"wrote {samples_path}")


@generate.command("versad-instruct")
@click.option("--manifest", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--seed", required=True, type=int)
@click.option("--images", "n_images", default=30, show_default=True)
@click.option("--conversation-ratio", default=26, show_default=True)
@click.option("--reasoning-ratio", default=4, show_default=True)
@click.option("--backend", type=click.Choice(["mock", "live"]), default="mock", show_default=True)
@click.option("--concurrency", default=8, show_default=True,
              help="Max in-flight LLM requests.")
@click.option("--force", is_flag=True)
def generate_versad_instruct(manifest, out_dir: Path, seed: int, n_images: int,
                             conversation_ratio: int, reasoning_ratio: int,
                             backend: str, concurrency: int, force: bool):
    """Caption images and spin multi-turn dialogues from the captions."""
    from .samples import derive_rng

    _, corpus, _ = _load_corpus(manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    captions_path = out_dir / "captions.jsonl"
    dialogues_path = out_dir / "dialogues.jsonl"
    report_path = out_dir / "instruct_report.json"
    _guard_outputs([captions_path, dialogues_path, report_path], force)
    client = _make_client(backend, out_dir, concurrency=concurrency)
    ids = sorted(img.image_id for img in corpus)
    derive_rng(seed, "", "pool:versad-instruct", 0).shuffle(ids)
    ids = ids[: min(n_images, len(ids))]
    by_id = {img.image_id: img for img in corpus}
    period = conversation_ratio + reasoning_ratio
    captions = []
    dialogues = []
    rejections = []
    for index, image_id in enumerate(ids):
        image = by_id[image_id]
        metadata = f"modality={image.modality}"
        if image.gsd is not None:
            metadata += f", resolution={image.gsd:g} m/pixel"
        caption, tid = client.caption_image(image.uri or image.image_id, metadata)
        captions.append({"image_id": image.image_id, "uri": image.uri,
                         "caption": caption, "transcript": tid})
        boxes = "\n".join(
            f"- {inst.category} at [{inst.bbox.x_min:.0f},{inst.bbox.y_min:.0f},"
            f"{inst.bbox.x_max:.0f},{inst.bbox.y_max:.0f}]"
            for inst in image.instances
        )
        mode = "conversation" if index % period < conversation_ratio else "reasoning"
        result = client.gen_dialogue(image.uri or image.image_id, caption, boxes, mode)
        if isinstance(result, cap.DialogueRejected):
            rejections.append({"image_id": image.image_id, "reason": result.reason,
                               "transcripts": result.transcript_ids})
            continue
        dialogues.append({"image_id": image.image_id, "mode": result.mode,
                          "turns": result.turns, "transcripts": result.transcript_ids})
    write_jsonl_atomic(captions, captions_path)
    write_jsonl_atomic(dialogues, dialogues_path)
    mode_counts = {
        "conversation": sum(1 for d in dialogues if d["mode"] == "conversation"),
        "reasoning": sum(1 for d in dialogues if d["mode"] == "reasoning"),
    }
    report = {
        "seed": seed,
        "images": len(ids),
        "counts": {"dialogues": {"generated": {"train": len(dialogues), "test": 0}}},
        "modes": mode_counts,
        "rejections": rejections,
    }
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"captions: {len(captions)}, dialogues: {len(dialogues)} "
               f"({mode_counts['conversation']} conversation / {mode_counts['reasoning']} reasoning)")


@main.command("evaluate")
@click.option("--dataset", "dataset_paths", multiple=True, required=True,
              type=click.Path(path_type=Path))
@click.option("--predictions", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--judge", type=click.Choice(["mock", "live"]), default="mock", show_default=True)
@click.option("--figures/--no-figures", "render_figures", default=True, show_default=True)
def evaluate(dataset_paths, predictions, out_dir: Path, judge: str, render_figures: bool):
    """Score a prediction file against one or more generated datasets."""
    dataset = []
    for path in dataset_paths:
        dataset.extend(read_samples_jsonl(path))
    if not dataset:
        raise _fail("no samples found in the given dataset files")
    try:
        preds = load_predictions(predictions)
    except PredictionError as exc:
        raise _fail(str(exc))
    out_dir.mkdir(parents=True, exist_ok=True)
    judge_impl = RuleJudge() if judge == "mock" else LlmJudge(_make_client("live", out_dir))
    try:
        report = evaluate_run(dataset, preds, judge_impl)
    except PredictionError as exc:
        raise _fail(str(exc))
    doc = report.to_dict()
    verdicts = doc.pop("verdicts")
    (out_dir / "report.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_jsonl_atomic(verdicts, out_dir / "verdicts.jsonl")
    if render_figures:
        save_score_figure(doc, out_dir / "report.png")
    for task, section in sorted(doc["per_task"].items()):
        main_metric = next(
            (f"{k}={section[k]:.4f}" for k in ("acc", "mae", "ciou", "f1") if k in section),
            "n/a",
        )
        click.echo(f"{task}: {main_metric} (n={section.get('n', section.get('n_fact', '?'))})")
    if doc["missing_predictions"]:
        click.echo(f"warning: {doc['missing_predictions']} samples had no prediction", err=True)
    if doc["incomplete"]:
        click.echo("evaluation incomplete: some samples could not be judged", err=True)
        sys.exit(1)


@main.group()
def qa():
    """Caption quality-assessment review service."""


@qa.command("init")
@click.option("--store", "store_dir", required=True, type=click.Path(path_type=Path))
@click.option("--captions", type=click.Path(path_type=Path), default=None,
              help="captions.jsonl produced by generate versad-instruct.")
@click.option("--session", "session_id", default=None)
@click.option("--n", default=315, show_default=True, help="Pairs to sample for review.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--demo", is_flag=True, help="Seed the pre-judged demo session instead.")
def qa_init(store_dir: Path, captions, session_id, n: int, seed: int, demo: bool):
    """Create a review session from caption pairs (or the demo fixture)."""
    store = qareview.SessionStore(store_dir)
    if demo:
        session = qareview.demo_session(session_id or "demo")
    else:
        if captions is None:
            raise click.UsageError("either --captions or --demo is required")
        pairs = qareview.load_caption_pairs(captions)
        try:
            sampled = qareview.sample_pairs(pairs, min(n, len(pairs)) if n else len(pairs), seed)
        except qareview.QaError as exc:
            raise _fail(str(exc))
        session = qareview.ReviewSession.from_pairs(session_id or f"review-{seed}", sampled)
    store.save(session)
    click.echo(f"session {session.session_id}: {len(session.pairs)} pairs, "
               f"{len(session.sentences)} sentences")


@qa.command("report")
@click.option("--store", "store_dir", required=True, type=click.Path(path_type=Path))
@click.option("--session", "session_id", required=True)
@click.option("--partial", is_flag=True, help="Report over judged sentences only.")
def qa_report(store_dir: Path, session_id: str, partial: bool):
    """Print the accuracy report for a session."""
    store = qareview.SessionStore(store_dir)
    try:
        session = store.load(session_id)
        report = qareview.accuracy_report(session, partial=partial)
    except qareview.QaError as exc:
        raise _fail(str(exc))
    click.echo(json.dumps(report, indent=2, sort_keys=True))
    if report["overall"] is not None:
        click.echo(
            f"overall accuracy: {report['overall'] * 100:.2f}% "
            f"(one-decimal display: {report['display']})"
        )


@qa.command("serve")
@click.option("--store", "store_dir", required=True, type=click.Path(path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=0, show_default=True, help="0 picks a free port.")
@click.option("--frontend", type=click.Path(path_type=Path), default=None,
              help="Directory with the built review UI (defaults to ./frontend/dist).")
@click.option("--demo", is_flag=True, help="Seed the demo session before serving.")
def qa_serve(store_dir: Path, host: str, port: int, frontend, demo: bool):
    """Serve the review API (and UI when built) over a local socket."""
    if demo:
        store = qareview.SessionStore(store_dir)
        if "demo" not in store.list_sessions():
            store.save(qareview.demo_session())
    if frontend is None:
        candidate = Path("frontend/dist")
        frontend = candidate if candidate.is_dir() else None
    qaserver.serve_forever(store_dir, host, port, frontend)


if __name__ == "__main__":
    main()
