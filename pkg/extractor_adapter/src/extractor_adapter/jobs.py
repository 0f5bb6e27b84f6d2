"""Extraction job descriptions and the item manifest format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

MODALITIES = ("visual", "textual", "vlm")


@dataclass
class ManifestItem:
    item_id: str
    image_path: str | None = None
    text: str | None = None


def load_manifest(path) -> list[ManifestItem]:
    """Read ``item_id<TAB>image_path<TAB>text`` rows; empty cells mean absent."""
    items = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            cells += [""] * (3 - len(cells))
            items.append(
                ManifestItem(
                    item_id=cells[0],
                    image_path=cells[1] or None,
                    text=cells[2] or None,
                )
            )
    return items


@dataclass
class ExtractionJob:
    """One extraction run over a manifest.

    ``model`` names a backend from the registry (e.g. ``resnet50``,
    ``stub-visual``, ``stub-vlm``). VLM jobs need a prompt (a builtin domain
    name or a template file path); visual jobs need image paths on every
    manifest item they are expected to embed.
    """

    model: str
    modality: str
    manifest: list[ManifestItem]
    output_embeddings: str
    output_answers: str | None = None
    prompt: str | None = None
    batch_size: int = 8
    device: str = "cpu"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.modality == "vlm":
            if not self.prompt:
                raise ValueError("vlm jobs require a prompt schema")
            if not self.output_answers:
                raise ValueError("vlm jobs require an answers output path")
        if self.modality == "visual" and not any(i.image_path for i in self.manifest):
            raise ValueError("visual jobs require image paths in the manifest")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
