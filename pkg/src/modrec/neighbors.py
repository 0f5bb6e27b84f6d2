"""Neighborhood recommenders and non-personalized baselines.

Item-kNN computes item-item similarity from interaction co-occurrence;
Attribute Item-kNN computes it from binary content attributes and still
scores users through their interaction history. Five similarity functions
and two feature weighting schemes are supported. Set-based similarities
(jaccard, asym, tversky) always operate on binary supports; weighting
applies to dot and cosine only.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from .base import BaseRecommender, check_dataset, check_seed
from .datasets import InteractionDataset
from .keywords import AttributeMatrix

logger = logging.getLogger(__name__)

SIMILARITIES = ("cosine", "jaccard", "dot", "asym", "tversky")
WEIGHTINGS = ("none", "tf_idf", "bm25")


def _validate_similarity(kind: str, alpha: float, beta: float) -> None:
    if kind not in SIMILARITIES:
        raise ValueError(f"unknown similarity {kind!r}, expected one of {SIMILARITIES}")
    if kind == "asym" and not 0.0 <= alpha <= 1.0:
        raise ValueError("asym similarity needs alpha in [0, 1]")
    if kind == "tversky" and (alpha < 0 or beta < 0):
        raise ValueError("tversky similarity needs alpha, beta >= 0")


def similarity(a, b, kind: str = "cosine", alpha: float = 0.5, beta: float = 1.0) -> float:
    """Similarity between two non-negative vectors over the same axis.

    dot and cosine use the values as given; jaccard, asym and tversky reduce
    the vectors to binary supports A, B:

        jaccard = |A∩B| / |A∪B|
        asym    = |A∩B| / (|A|^alpha * |B|^(1-alpha))
        tversky = |A∩B| / (|A∩B| + alpha|A\\B| + beta|B\\A|)

    All-empty cases return 0.
    """
    _validate_similarity(kind, alpha, beta)
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("vectors must share the same axis")
    if kind == "dot":
        return float(a @ b)
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return 0.0
        return float(a @ b / (na * nb))
    sa, sb = a > 0, b > 0
    inter = float(np.count_nonzero(sa & sb))
    ca, cb = float(np.count_nonzero(sa)), float(np.count_nonzero(sb))
    if kind == "jaccard":
        union = ca + cb - inter
        return inter / union if union > 0 else 0.0
    if kind == "asym":
        denom = ca**alpha * cb ** (1.0 - alpha)
        return inter / denom if denom > 0 else 0.0
    denom = inter + alpha * (ca - inter) + beta * (cb - inter)
    return inter / denom if denom > 0 else 0.0


def apply_weighting(
    matrix, scheme: str = "none", bm25_k1: float = 1.2, bm25_b: float = 0.75
) -> sp.csr_matrix:
    """Reweight an item-by-axis count matrix.

    tf_idf: w = tf * ln(N / df), df counting items where the element occurs.
    bm25:   w = idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg_len)),
            idf = ln((N - df + 0.5) / (df + 0.5) + 1), len = item row sum.
    """
    if scheme not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {scheme!r}, expected one of {WEIGHTINGS}")
    mat = sp.csr_matrix(matrix, dtype=np.float64)
    if (mat.data < 0).any():
        raise ValueError("weighting expects non-negative counts")
    if scheme == "none":
        return mat
    n_items = mat.shape[0]
    df = np.bincount(sp.coo_matrix(mat).col, minlength=mat.shape[1]).astype(np.float64)
    coo = sp.coo_matrix(mat)
    if scheme == "tf_idf":
        idf = np.zeros_like(df)
        nz = df > 0
        idf[nz] = np.log(n_items / df[nz])
        data = coo.data * idf[coo.col]
    else:
        idf = np.log((n_items - df + 0.5) / (df + 0.5) + 1.0)
        lengths = np.asarray(mat.sum(axis=1)).ravel()
        avg_len = lengths.mean() if n_items else 0.0
        if avg_len == 0:
            return mat
        norm = bm25_k1 * (1.0 - bm25_b + bm25_b * lengths / avg_len)
        data = idf[coo.col] * coo.data * (bm25_k1 + 1.0) / (coo.data + norm[coo.row])
    return sp.csr_matrix((data, (coo.row, coo.col)), shape=mat.shape)


def pairwise_similarity(
    matrix, kind: str = "cosine", alpha: float = 0.5, beta: float = 1.0
) -> np.ndarray:
    """All-pairs similarity between the rows of an item-by-axis matrix."""
    _validate_similarity(kind, alpha, beta)
    dense = np.asarray(
        matrix.toarray() if sp.issparse(matrix) else matrix, dtype=np.float64
    )
    if kind == "dot":
        return dense @ dense.T
    if kind == "cosine":
        norms = np.linalg.norm(dense, axis=1, keepdims=True)
        unit = np.divide(dense, norms, out=np.zeros_like(dense), where=norms > 0)
        return unit @ unit.T
    support = (dense > 0).astype(np.float64)
    inter = support @ support.T
    sizes = support.sum(axis=1)
    if kind == "jaccard":
        denom = sizes[:, None] + sizes[None, :] - inter
    elif kind == "asym":
        denom = sizes[:, None] ** alpha * sizes[None, :] ** (1.0 - alpha)
    else:
        denom = inter + alpha * (sizes[:, None] - inter) + beta * (sizes[None, :] - inter)
    return np.divide(inter, denom, out=np.zeros_like(inter), where=denom > 0)


class NeighborhoodModel:
    """Per-item top-k neighbor lists, stored as a sparse item-by-item matrix.

    Row i holds the retained neighbors of item i; lists exclude self, are
    sorted by similarity descending with index-ascending tie-break, and keep
    only strictly positive weights.
    """

    def __init__(self, weights: sp.csr_matrix, k: int, source: str):
        self.weights = weights.tocsr()
        self.k = k
        self.source = source

    @property
    def n_items(self) -> int:
        return self.weights.shape[0]

    def neighbors(self, item: int) -> list[tuple[int, float]]:
        row = self.weights.getrow(item)
        pairs = sorted(zip(row.indices, row.data), key=lambda p: (-p[1], p[0]))
        return [(int(i), float(w)) for i, w in pairs]

    def to_tsv(self, path, item_ids: list[str] | None = None) -> None:
        ids = item_ids if item_ids is not None else [str(i) for i in range(self.n_items)]
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(self.n_items):
                cells = ",".join(f"{ids[j]}:{w:.10g}" for j, w in self.neighbors(i))
                fh.write(f"{ids[i]}\t{cells}\n")

    @classmethod
    def from_tsv(cls, path, source: str = "interactions") -> tuple["NeighborhoodModel", list[str]]:
        ids: list[str] = []
        rows: list[list[tuple[str, float]]] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                item_id, _, cells = line.rstrip("\n").partition("\t")
                ids.append(item_id)
                row = []
                if cells:
                    for cell in cells.split(","):
                        nid, _, w = cell.rpartition(":")
                        row.append((nid, float(w)))
                rows.append(row)
        index = {item_id: i for i, item_id in enumerate(ids)}
        mat = sp.lil_matrix((len(ids), len(ids)))
        k = 0
        for i, row in enumerate(rows):
            k = max(k, len(row))
            for nid, w in row:
                mat[i, index[nid]] = w
        return cls(mat.tocsr(), k=k, source=source), ids


def topk_neighbors(sim: np.ndarray, k: int) -> sp.csr_matrix:
    """Keep the k best strictly positive off-diagonal entries of each row."""
    n = sim.shape[0]
    sim = sim.copy()
    np.fill_diagonal(sim, -np.inf)
    rows, cols, data = [], [], []
    for i in range(n):
        order = np.lexsort((np.arange(n), -sim[i]))
        kept = [j for j in order[:k] if sim[i, j] > 0]
        rows.extend([i] * len(kept))
        cols.extend(kept)
        data.extend(sim[i, j] for j in kept)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def score_history(model: NeighborhoodModel, history) -> np.ndarray:
    """score(i) = sum of i's stored similarities to the items in the history."""
    h = np.zeros(model.n_items)
    idx = np.fromiter(history, dtype=np.int64) if not isinstance(history, np.ndarray) else history
    if idx.size:
        h[idx] = 1.0
    return model.weights @ h


class ItemKNN(BaseRecommender):
    """Item-based kNN over the interaction matrix.

    Item vectors are the columns of the (optionally weighted) user-item
    matrix; a user's score for item i aggregates the stored similarities
    between i and the user's training history.
    """

    def __init__(
        self,
        similarity: str = "cosine",
        neighbors: int = 20,
        weighting: str = "none",
        alpha: float = 0.5,
        beta: float = 1.0,
        bm25_k1: float = 1.2,
        bm25_b: float = 0.75,
    ):
        self.similarity = similarity
        self.neighbors = neighbors
        self.weighting = weighting
        self.alpha = alpha
        self.beta = beta
        self.bm25_k1 = bm25_k1
        self.bm25_b = bm25_b

    def _item_vectors(self, ds: InteractionDataset) -> sp.csr_matrix:
        users, items = ds.interactions_of("train")
        return sp.csr_matrix(
            (np.ones(len(users)), (items, users)), shape=(ds.n_items, ds.n_users)
        )

    def fit(self, ds: InteractionDataset, attributes: AttributeMatrix | None = None):
        ds = check_dataset(ds)
        _validate_similarity(self.similarity, self.alpha, self.beta)
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        k = self.neighbors
        if k > ds.n_items - 1:
            logger.warning("neighbors=%d clamped to n_items-1=%d", k, ds.n_items - 1)
            k = ds.n_items - 1
        vectors = self._item_vectors(ds) if attributes is None else sp.csr_matrix(
            attributes.matrix.astype(np.float64)
        )
        if self.similarity in ("dot", "cosine"):
            vectors = apply_weighting(vectors, self.weighting, self.bm25_k1, self.bm25_b)
        sim = pairwise_similarity(vectors, self.similarity, self.alpha, self.beta)
        source = "interactions" if attributes is None else "attributes"
        self.model_ = NeighborhoodModel(topk_neighbors(sim, k), k=k, source=source)
        self.n_items_ = ds.n_items
        self.train_items_ = ds.items_by_user("train")
        return self

    def score_user(self, user: int) -> np.ndarray:
        self._check_fitted()
        return score_history(self.model_, self.train_items_[user])


class AttributeItemKNN(ItemKNN):
    """Item-kNN whose similarity comes from content attributes.

    Similarities are computed over the one-hot attribute matrix; scoring
    still aggregates over each user's interaction history, so content only
    replaces the similarity source.
    """

    def fit(self, ds: InteractionDataset, attributes: AttributeMatrix | np.ndarray = None):
        if attributes is None:
            raise ValueError("AttributeItemKNN requires an attribute matrix")
        if not isinstance(attributes, AttributeMatrix):
            attributes = AttributeMatrix(
                list(ds.item_ids),
                np.asarray(attributes, dtype=np.uint8),
                [f"f{j}" for j in range(np.asarray(attributes).shape[1])],
            )
        aligned = self._align(attributes, ds)
        return super().fit(ds, attributes=aligned)

    @staticmethod
    def _align(attributes: AttributeMatrix, ds: InteractionDataset) -> AttributeMatrix:
        row_of = {item_id: r for r, item_id in enumerate(attributes.item_ids)}
        matrix = np.zeros((ds.n_items, attributes.n_features), dtype=np.uint8)
        missing = 0
        for r, item_id in enumerate(ds.item_ids):
            if item_id in row_of:
                matrix[r] = attributes.matrix[row_of[item_id]]
            else:
                missing += 1
        if missing:
            logger.warning("%d dataset items have no attributes (all-zero rows)", missing)
        return AttributeMatrix(list(ds.item_ids), matrix, attributes.feature_names)


class MostPop(BaseRecommender):
    """Scores every item by its training interaction count, user-independent."""

    def fit(self, ds: InteractionDataset):
        ds = check_dataset(ds)
        _, items = ds.interactions_of("train")
        self.popularity_ = np.bincount(items, minlength=ds.n_items).astype(np.float64)
        self.n_items_ = ds.n_items
        return self

    def score_user(self, user: int) -> np.ndarray:
        self._check_fitted()
        return self.popularity_.copy()

    def checkpoint_tensors(self) -> dict[str, np.ndarray]:
        self._check_fitted()
        return {"popularity": self.popularity_.copy()}

    def load_checkpoint_tensors(self, tensors, n_users: int, n_items: int):
        self.popularity_ = np.asarray(tensors["popularity"], dtype=np.float64)
        self.n_items_ = n_items
        return self


class RandomRec(BaseRecommender):
    """Per-(user, item) pseudo-random scores keyed by the seed."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, ds: InteractionDataset):
        ds = check_dataset(ds)
        check_seed(self.seed)
        self.n_items_ = ds.n_items
        return self

    def score_user(self, user: int) -> np.ndarray:
        self._check_fitted()
        return np.random.default_rng([self.seed, int(user)]).random(self.n_items_)
