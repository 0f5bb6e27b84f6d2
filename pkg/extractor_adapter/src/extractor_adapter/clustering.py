"""Keyword synonym maps from semantic clustering.

Keywords are pulled out of the structured answers, normalized, embedded
with a sentence encoder, and grouped by agglomerative clustering under
cosine distance. Each cluster's most frequent member (ties broken
lexicographically) becomes the canonical form; the emitted TSV maps every
other member to it.
"""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path

import numpy as np

from .backends import StubTextBackend
from .mmfe import atomic_write_text

_SLOT_VALUE = re.compile(r"\[([^\]]+)\]\s*\{([^}]*)\}")


def _normalize(raw: str) -> str:
    return " ".join(raw.lower().split()).strip(".,;:!?'\"()")


def extract_keywords(answers_path) -> Counter:
    """Normalized keyword frequencies across all slots of an answers TSV."""
    counts: Counter = Counter()
    with Path(answers_path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            _, _, text = line.rstrip("\n").partition("\t")
            for _, value in _SLOT_VALUE.findall(text):
                keyword = _normalize(value)
                if keyword:
                    counts[keyword] += 1
    return counts


def build_synonym_map(
    answers_path,
    output_path,
    distance_threshold: float = 0.2,
    encoder=None,
) -> dict[str, str]:
    """Cluster keywords and write variant -> canonical rows.

    A threshold of 0 merges nothing and produces an empty (identity) map.
    Returns the mapping that was written.
    """
    if distance_threshold < 0:
        raise ValueError("distance_threshold must be >= 0")
    counts = extract_keywords(answers_path)
    if len(counts) < 2:
        raise ValueError("need at least 2 distinct keywords to cluster")
    keywords = sorted(counts)

    mapping: dict[str, str] = {}
    if distance_threshold > 0:
        from sklearn.cluster import AgglomerativeClustering

        encoder = encoder or StubTextBackend(dim=64)
        vectors = encoder.embed_texts(keywords).astype(np.float64)
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        vectors = np.divide(vectors, norms, out=vectors, where=norms > 0)
        labels = AgglomerativeClustering(
            n_clusters=None,
            distance_threshold=distance_threshold,
            metric="cosine",
            linkage="average",
        ).fit_predict(vectors)
        for label in np.unique(labels):
            members = [keywords[i] for i in np.flatnonzero(labels == label)]
            if len(members) < 2:
                continue
            canonical = min(members, key=lambda kw: (-counts[kw], kw))
            for member in members:
                if member != canonical:
                    mapping[member] = canonical

    atomic_write_text(
        output_path,
        "".join(f"{variant}\t{canonical}\n" for variant, canonical in sorted(mapping.items())),
    )
    return mapping
