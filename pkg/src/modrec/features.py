"""Item feature tables: file I/O, dataset alignment, noise baselines, fusion.

A feature table is a dense float32 matrix with one row per item id plus
provenance (which extractor produced it, its modality, whether rows were
L2-normalized). Noise baselines come in two strengths: i.i.d. standard
Gaussian entries, and multivariate Gaussian matched to the empirical
moments of a real table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import read_feature_file, write_feature_file
from .datasets import InteractionDataset

logger = logging.getLogger(__name__)

MODALITIES = ("visual", "textual", "multimodal", "noise")


class FeatureValidationError(ValueError):
    """Raised for non-finite entries, duplicate ids, or shape mismatches."""


@dataclass(frozen=True)
class Provenance:
    extractor_name: str
    modality: str
    normalized: bool = False

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")


@dataclass
class FeatureTable:
    item_ids: list[str]
    matrix: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise FeatureValidationError("feature matrix must be 2-D")
        if self.matrix.shape[0] != len(self.item_ids):
            raise FeatureValidationError(
                f"{len(self.item_ids)} ids but {self.matrix.shape[0]} matrix rows"
            )
        if len(set(self.item_ids)) != len(self.item_ids):
            raise FeatureValidationError("item ids must be unique")
        bad = ~np.isfinite(self.matrix)
        if bad.any():
            row = int(np.argwhere(bad)[0][0])
            raise FeatureValidationError(
                f"non-finite feature value for item {self.item_ids[row]!r}"
            )

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def save_features(table: FeatureTable, path) -> None:
    write_feature_file(path, table.item_ids, table.matrix)


def load_features(
    path,
    *,
    extractor_name: str | None = None,
    modality: str = "multimodal",
    normalized: bool = False,
) -> FeatureTable:
    """Load a binary feature file.

    The file format carries no provenance, so the caller may supply it;
    the extractor name defaults to the file stem.
    """
    item_ids, matrix = read_feature_file(path)
    name = extractor_name if extractor_name is not None else Path(path).stem
    return FeatureTable(item_ids, matrix, Provenance(name, modality, normalized))


def save_features_tsv(table: FeatureTable, path) -> None:
    """Debug alternative to the binary format: item_id<TAB>v1,v2,..."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for item_id, row in zip(table.item_ids, table.matrix):
            fh.write(item_id + "\t" + ",".join(repr(float(v)) for v in row) + "\n")


def load_features_tsv(path, **provenance) -> FeatureTable:
    item_ids: list[str] = []
    rows: list[np.ndarray] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            item_id, _, values = line.rstrip("\n").partition("\t")
            item_ids.append(item_id)
            rows.append(np.array([float(v) for v in values.split(",")], dtype=np.float32))
    provenance.setdefault("extractor_name", Path(path).stem)
    provenance.setdefault("modality", "multimodal")
    return FeatureTable(item_ids, np.vstack(rows), Provenance(**provenance))


@dataclass
class AlignResult:
    """Alignment outcome: the reordered table plus what was missing."""

    table: FeatureTable
    missing_ids: list[str]
    kept_item_indices: np.ndarray | None = None


def align_to_dataset(
    table: FeatureTable, ds: InteractionDataset, missing_policy: str = "error"
) -> AlignResult:
    """Reorder rows so row r corresponds to dataset item index r.

    missing_policy:
      * ``error``: raise on the first dataset item absent from the table.
      * ``zero_fill``: absent items get a zero row and are listed in the result.
      * ``drop_items``: the table covers only present items, in dataset order;
        ``kept_item_indices`` tells the caller which dataset items survived.
    """
    if missing_policy not in ("error", "zero_fill", "drop_items"):
        raise ValueError(f"unknown missing_policy {missing_policy!r}")
    row_of = {item_id: r for r, item_id in enumerate(table.item_ids)}
    missing = [item_id for item_id in ds.item_ids if item_id not in row_of]
    if missing and missing_policy == "error":
        raise FeatureValidationError(
            f"feature table {table.provenance.extractor_name!r} is missing item {missing[0]!r}"
        )
    if missing_policy == "drop_items":
        kept = np.array(
            [i for i, item_id in enumerate(ds.item_ids) if item_id in row_of], dtype=np.int64
        )
        matrix = table.matrix[[row_of[ds.item_ids[i]] for i in kept]]
        aligned = FeatureTable([ds.item_ids[i] for i in kept], matrix, table.provenance)
        return AlignResult(aligned, missing, kept)
    matrix = np.zeros((ds.n_items, table.dim), dtype=np.float32)
    for r, item_id in enumerate(ds.item_ids):
        if item_id in row_of:
            matrix[r] = table.matrix[row_of[item_id]]
    if missing:
        logger.info("zero-filled %d items absent from feature table", len(missing))
    return AlignResult(FeatureTable(list(ds.item_ids), matrix, table.provenance), missing)


def _default_ids(n_items: int) -> list[str]:
    width = max(1, len(str(n_items - 1)))
    return [f"item{idx:0{width}d}" for idx in range(n_items)]


def gen_gaussian_noise(
    n_items: int, dim: int, seed: int, item_ids: list[str] | None = None
) -> FeatureTable:
    """i.i.d. standard normal features from a counter-based stream keyed by seed."""
    if n_items < 1 or dim < 1:
        raise ValueError("n_items and dim must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    matrix = rng.standard_normal((n_items, dim), dtype=np.float32)
    ids = item_ids if item_ids is not None else _default_ids(n_items)
    return FeatureTable(list(ids), matrix, Provenance("gaussian-noise", "noise"))


@dataclass
class MomentSummary:
    """Empirical mean and (optionally shrunk) covariance of a feature table."""

    mean: np.ndarray
    covariance: np.ndarray
    n_samples: int
    shrinkage: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-6):
            raise ValueError("covariance must be symmetric within 1e-6")
        if np.any(np.diag(self.covariance) < 0):
            raise ValueError("covariance diagonal must be non-negative")


def fit_moments(table: FeatureTable, shrinkage: float = 0.1) -> MomentSummary:
    """Empirical mean and covariance (n-1 denominator), accumulated in float64.

    The covariance is blended as (1-shrinkage)*S + shrinkage*diag(S);
    shrinkage=1 keeps only per-dimension variances.
    """
    if table.n_items < 2:
        raise ValueError("need at least 2 items to estimate moments")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must be in [0, 1]")
    x = table.matrix.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (table.n_items - 1)
    cov = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    cov = 0.5 * (cov + cov.T)
    return MomentSummary(mean, cov, table.n_items, shrinkage)


def gen_multivariate_noise(
    moments: MomentSummary, n_items: int, seed: int, item_ids: list[str] | None = None
) -> FeatureTable:
    """Gaussian features with the summary's mean and covariance.

    Rows are mean + L z with L a Cholesky factor; if factorization fails a
    jitter of 1e-6 * trace/dim is added to the diagonal once before giving up.
    """
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    cov = moments.covariance
    dim = cov.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = 1e-6 * np.trace(cov) / dim or 1e-12
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(dim))
        except np.linalg.LinAlgError:
            smallest = float(np.linalg.eigvalsh(cov)[0])
            raise ValueError(
                f"covariance is not PSD even after jitter {jitter:.3e}; "
                f"smallest eigenvalue ~ {smallest:.3e}"
            ) from None
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((n_items, dim))
    matrix = (moments.mean + z @ chol.T).astype(np.float32)
    ids = item_ids if item_ids is not None else _default_ids(n_items)
    return FeatureTable(list(ids), matrix, Provenance("multivariate-noise", "noise"))


def concat_features(tables: list[FeatureTable], l2_normalize: bool = False) -> FeatureTable:
    """Late fusion by horizontal concatenation over identical item orderings.

    When ``l2_normalize`` is set, each block's rows are normalized to unit
    length first (zero rows stay zero).
    """
    if not tables:
        raise ValueError("need at least one table")
    ref = tables[0]
    for t in tables[1:]:
        if t.item_ids != ref.item_ids:
            divergent = next(
                (a for a, b in zip(ref.item_ids, t.item_ids) if a != b),
                ref.item_ids[min(len(t.item_ids), len(ref.item_ids) - 1)]
                if len(t.item_ids) != len(ref.item_ids)
                else ref.item_ids[0],
            )
            raise FeatureValidationError(
                f"item sets differ between tables (first divergence at {divergent!r})"
            )
    blocks = []
    for t in tables:
        block = t.matrix.astype(np.float64)
        if l2_normalize:
            norms = np.linalg.norm(block, axis=1, keepdims=True)
            block = np.divide(block, norms, out=block.copy(), where=norms > 0)
        blocks.append(block)
    name = "+".join(t.provenance.extractor_name for t in tables)
    return FeatureTable(
        list(ref.item_ids),
        np.hstack(blocks).astype(np.float32),
        Provenance(name, "multimodal", normalized=l2_normalize),
    )
