"""Estimator base class and input validation helpers.

All recommenders follow the scikit-learn estimator protocol: hyperparameters
in ``__init__`` (introspectable via ``get_params``), data in ``fit``, fitted
state in trailing-underscore attributes. A fitted model is an opaque scorer:
``score_user(u)`` returns one relevance score per item, and ranking-based
evaluation is built on that single contract.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datasets import InteractionDataset
from .features import FeatureTable


class TrainingDivergedError(RuntimeError):
    """Raised when parameters go non-finite during training."""

    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))


def check_dataset(ds) -> InteractionDataset:
    if not isinstance(ds, InteractionDataset):
        raise TypeError(f"expected an InteractionDataset, got {type(ds).__name__}")
    if ds.n_interactions == 0:
        raise ValueError("dataset has no interactions")
    return ds


def check_feature_matrix(features, ds: InteractionDataset) -> np.ndarray:
    """Accept a FeatureTable or array aligned to the dataset's item indexing."""
    if isinstance(features, FeatureTable):
        if features.item_ids != list(ds.item_ids):
            raise ValueError(
                "feature table is not aligned to the dataset (run align_to_dataset first)"
            )
        matrix = features.matrix
    else:
        matrix = np.asarray(features)
    if matrix.ndim != 2 or matrix.shape[0] != ds.n_items:
        raise ValueError(
            f"features must have one row per item: got {matrix.shape}, need ({ds.n_items}, dim)"
        )
    if not np.all(np.isfinite(matrix)):
        raise ValueError("features contain non-finite values")
    return matrix.astype(np.float64)


def check_seed(seed) -> int:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed


class BaseRecommender(BaseEstimator):
    """Common scorer surface shared by every fitted recommender."""

    def _check_fitted(self):
        if not hasattr(self, "n_items_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; call fit first"
            )

    def score_user(self, user: int) -> np.ndarray:
        """Relevance scores for every item, higher is better."""
        raise NotImplementedError

    def score_users(self, users) -> np.ndarray:
        self._check_fitted()
        return np.stack([self.score_user(u) for u in users])
