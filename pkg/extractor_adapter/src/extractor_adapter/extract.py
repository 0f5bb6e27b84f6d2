"""Job runners: turn a manifest into feature files and answer tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .backends import make_backend
from .jobs import ExtractionJob
from .mmfe import atomic_write_text, write_mmfe
from .prompts import build_prompt
from .vlm import make_vlm_backend

logger = logging.getLogger(__name__)


@dataclass
class ExtractionReport:
    n_items: int
    n_embedded: int
    skipped: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)


def _batches(seq, size):
    for start in range(0, len(seq), size):
        yield seq[start : start + size]


def extract_unimodal(job: ExtractionJob, backend=None) -> ExtractionReport:
    """Embed every manifest item and write the feature file.

    Visual jobs read images, textual jobs read the text column; items whose
    input is missing or unreadable are skipped and logged, leaving the gap
    for the consumer's alignment step to handle.
    """
    if job.modality not in ("visual", "textual"):
        raise ValueError("extract_unimodal handles visual or textual jobs")
    backend = backend or make_backend(job.model, job.modality, job.device, **job.options)

    usable = []
    skipped = []
    for item in job.manifest:
        source = item.image_path if job.modality == "visual" else item.text
        if not source:
            skipped.append(item.item_id)
            continue
        usable.append((item.item_id, source))

    ids: list[str] = []
    rows: list[np.ndarray] = []
    for batch in _batches(usable, job.batch_size):
        sources = [s for _, s in batch]
        try:
            if job.modality == "visual":
                embedded = backend.embed_images(sources)
            else:
                embedded = backend.embed_texts(sources)
        except (OSError, ValueError):
            # Retry one by one so a single bad input only drops one row.
            embedded = []
            for item_id, source in batch:
                try:
                    one = (
                        backend.embed_images([source])
                        if job.modality == "visual"
                        else backend.embed_texts([source])
                    )
                    embedded.append(one[0])
                    ids.append(item_id)
                except (OSError, ValueError) as exc:
                    logger.warning("skipping %s: %s", item_id, exc)
                    skipped.append(item_id)
            rows.extend(embedded)
            continue
        ids.extend(item_id for item_id, _ in batch)
        rows.extend(embedded)

    if not rows:
        raise ValueError("no items could be embedded")
    write_mmfe(job.output_embeddings, ids, np.stack(rows))
    if skipped:
        logger.warning("skipped %d of %d items", len(skipped), len(job.manifest))
    return ExtractionReport(len(job.manifest), len(ids), skipped=skipped)


def extract_vlm(job: ExtractionJob, backend=None) -> ExtractionReport:
    """Generate a structured description and embedding per item.

    Writes the answers TSV and the feature file side by side. Failed
    generations keep their row: an empty answer and a zero embedding,
    flagged in the report.
    """
    if job.modality != "vlm":
        raise ValueError("extract_vlm handles vlm jobs")
    backend = backend or make_vlm_backend(job.model, job.device, **job.options)
    prompt = build_prompt(job.prompt)

    ids: list[str] = []
    answers: list[str] = []
    rows: list[np.ndarray] = []
    failed: list[str] = []
    dim: int | None = None
    for item in job.manifest:
        ids.append(item.item_id)
        try:
            if not item.image_path:
                raise ValueError("manifest item has no image")
            text, embedding = backend.generate(item.image_path, prompt)
            dim = dim or embedding.shape[0]
        except (OSError, ValueError) as exc:
            logger.warning("generation failed for %s: %s", item.item_id, exc)
            failed.append(item.item_id)
            text, embedding = "", None
        answers.append(" ".join(text.split()))
        rows.append(embedding)

    if dim is None:
        raise ValueError("every generation failed; nothing to write")
    matrix = np.stack([r if r is not None else np.zeros(dim, dtype=np.float32) for r in rows])
    write_mmfe(job.output_embeddings, ids, matrix)
    atomic_write_text(
        job.output_answers,
        "".join(f"{item_id}\t{answer}\n" for item_id, answer in zip(ids, answers)),
    )
    return ExtractionReport(len(job.manifest), len(ids) - len(failed), failed=failed)
