"""Command-line interface for extraction jobs."""

from __future__ import annotations

import json

import click

from . import __version__
from .clustering import build_synonym_map
from .extract import extract_unimodal, extract_vlm
from .jobs import ExtractionJob, load_manifest


@click.group()
@click.version_option(__version__)
def main():
    """Produce feature files, structured answers, and synonym maps."""


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--model", required=True, help="resnet50 | vit | sbert | clip | stub-visual | stub-textual")
@click.option("--modality", type=click.Choice(["visual", "textual"]), required=True)
@click.option("--output", required=True, type=click.Path())
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--device", default="cpu", show_default=True)
@click.option("--options", default="{}", help="JSON with backend options (dim, checkpoint, ...)")
def extract(manifest, model, modality, output, batch_size, device, options):
    """Embed manifest items with a unimodal or contrastive encoder."""
    job = ExtractionJob(
        model=model,
        modality=modality,
        manifest=load_manifest(manifest),
        output_embeddings=output,
        batch_size=batch_size,
        device=device,
        options=json.loads(options),
    )
    report = extract_unimodal(job)
    click.echo(json.dumps({"n_items": report.n_items, "n_embedded": report.n_embedded,
                           "skipped": report.skipped}))


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--model", default="stub-vlm", show_default=True,
              help="stub-vlm | hf:<checkpoint>")
@click.option("--prompt", required=True,
              help="Builtin domain (baby | pets | clothing) or a template file.")
@click.option("--embeddings", required=True, type=click.Path())
@click.option("--answers", required=True, type=click.Path())
@click.option("--device", default="cpu", show_default=True)
@click.option("--options", default="{}")
def vlm(manifest, model, prompt, embeddings, answers, device, options):
    """Generate structured descriptions plus end-of-sequence embeddings."""
    job = ExtractionJob(
        model=model,
        modality="vlm",
        manifest=load_manifest(manifest),
        output_embeddings=embeddings,
        output_answers=answers,
        prompt=prompt,
        device=device,
        options=json.loads(options),
    )
    report = extract_vlm(job)
    click.echo(json.dumps({"n_items": report.n_items, "n_generated": report.n_embedded,
                           "failed": report.failed}))


@main.command()
@click.option("--answers", required=True, type=click.Path(exists=True))
@click.option("--threshold", type=float, default=0.2, show_default=True,
              help="Cosine distance threshold for merging keywords.")
@click.option("--output", required=True, type=click.Path())
@click.option("--encoder", default="stub-textual", show_default=True,
              help="stub-textual | sbert")
@click.option("--device", default="cpu", show_default=True)
def synonyms(answers, threshold, output, encoder, device):
    """Cluster answer keywords into a variant -> canonical synonym map."""
    from .backends import make_backend

    mapping = build_synonym_map(
        answers, output, distance_threshold=threshold,
        encoder=make_backend(encoder, "textual", device),
    )
    click.echo(json.dumps({"n_merged": len(mapping)}))


if __name__ == "__main__":
    main()
