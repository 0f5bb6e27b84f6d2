"""Encoder backends.

Real backends wrap pre-trained models and expose the extraction points the
benchmark expects: the final pooling layer for convolutional visual
encoders, the [CLS] token for transformer visual encoders, mean pooling
over token embeddings for the sentence encoder, and the shared projection
for the contrastive image-text model. They import their frameworks lazily
and need the checkpoint available locally or via the model hub.

Stub backends produce deterministic hash-derived vectors from the raw
input bytes; they exist for offline pipelines and tests, where only the
artifact contract matters, not embedding quality.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


def _hash_vector(payload: bytes, dim: int, salt: str = "") -> np.ndarray:
    digest = hashlib.sha256(salt.encode("utf-8") + payload).digest()
    seed = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.default_rng(seed).standard_normal(dim).astype(np.float32)


class StubVisualBackend:
    """Deterministic vectors from image file contents."""

    name = "stub-visual"

    def __init__(self, dim: int = 64):
        self.dim = dim

    def embed_images(self, paths: list[str]) -> np.ndarray:
        rows = [_hash_vector(Path(p).read_bytes(), self.dim, salt="visual") for p in paths]
        return np.stack(rows)


class StubTextBackend:
    """Deterministic vectors from normalized text."""

    name = "stub-textual"

    def __init__(self, dim: int = 64):
        self.dim = dim

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        rows = [
            _hash_vector(" ".join(t.lower().split()).encode("utf-8"), self.dim, salt="text")
            for t in texts
        ]
        return np.stack(rows)


class ResNet50Backend:
    """Convolutional visual encoder; activations from the final pooling layer."""

    name = "resnet50"

    def __init__(self, pretrained: bool = True, device: str = "cpu"):
        import torch
        import torchvision

        weights = torchvision.models.ResNet50_Weights.DEFAULT if pretrained else None
        model = torchvision.models.resnet50(weights=weights)
        model.fc = torch.nn.Identity()  # keep the 2048-d pooled activations
        self._model = model.eval().to(device)
        self._device = device
        if weights is not None:
            self._transform = weights.transforms()
        else:
            from torchvision import transforms

            self._transform = transforms.Compose(
                [transforms.Resize((224, 224)), transforms.ToTensor()]
            )

    def embed_images(self, paths: list[str]) -> np.ndarray:
        import torch
        from PIL import Image

        batch = torch.stack(
            [self._transform(Image.open(p).convert("RGB")) for p in paths]
        ).to(self._device)
        with torch.inference_mode():
            out = self._model(batch)
        return out.cpu().numpy().astype(np.float32)


class ViTBackend:
    """Transformer visual encoder; the [CLS] token of the final layer."""

    name = "vit"

    def __init__(self, checkpoint: str = "google/vit-base-patch16-224", device: str = "cpu"):
        from transformers import ViTImageProcessor, ViTModel

        self._processor = ViTImageProcessor.from_pretrained(checkpoint)
        self._model = ViTModel.from_pretrained(checkpoint).eval().to(device)
        self._device = device

    def embed_images(self, paths: list[str]) -> np.ndarray:
        import torch
        from PIL import Image

        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self._processor(images=images, return_tensors="pt").to(self._device)
        with torch.inference_mode():
            out = self._model(**inputs)
        return out.last_hidden_state[:, 0].cpu().numpy().astype(np.float32)


class SbertBackend:
    """Sentence encoder; mean pooling over token embeddings."""

    name = "sbert"

    def __init__(self, checkpoint: str = "sentence-transformers/all-mpnet-base-v2",
                 device: str = "cpu"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(checkpoint, device=device)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return np.asarray(
            self._model.encode(texts, convert_to_numpy=True, normalize_embeddings=False),
            dtype=np.float32,
        )


class ClipBackend:
    """Contrastive image-text model; projections onto the shared space."""

    def __init__(self, mode: str, checkpoint: str = "openai/clip-vit-large-patch14",
                 device: str = "cpu"):
        from transformers import CLIPModel, CLIPProcessor

        self.mode = mode
        self._processor = CLIPProcessor.from_pretrained(checkpoint)
        self._model = CLIPModel.from_pretrained(checkpoint).eval().to(device)
        self._device = device

    def embed_images(self, paths: list[str]) -> np.ndarray:
        import torch
        from PIL import Image

        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self._processor(images=images, return_tensors="pt").to(self._device)
        with torch.inference_mode():
            out = self._model.get_image_features(**inputs)
        return out.cpu().numpy().astype(np.float32)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        import torch

        inputs = self._processor(
            text=texts, return_tensors="pt", padding=True, truncation=True
        ).to(self._device)
        with torch.inference_mode():
            out = self._model.get_text_features(**inputs)
        return out.cpu().numpy().astype(np.float32)


def make_backend(model: str, modality: str, device: str = "cpu", **options):
    """Instantiate an encoder backend by registry name."""
    if model == "stub-visual":
        return StubVisualBackend(dim=options.get("dim", 64))
    if model == "stub-textual":
        return StubTextBackend(dim=options.get("dim", 64))
    if model == "resnet50":
        return ResNet50Backend(pretrained=options.get("pretrained", True), device=device)
    if model == "vit":
        return ViTBackend(device=device, **{k: v for k, v in options.items()
                                            if k == "checkpoint"})
    if model == "sbert":
        return SbertBackend(device=device, **{k: v for k, v in options.items()
                                              if k == "checkpoint"})
    if model == "clip":
        return ClipBackend(mode=modality, device=device,
                           **{k: v for k, v in options.items() if k == "checkpoint"})
    raise ValueError(f"unknown encoder backend {model!r}")
