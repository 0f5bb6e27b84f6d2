"""Shared test fixtures: tiny hand-built datasets and planted-cluster data."""

from __future__ import annotations

import numpy as np

from modrec.datasets import InteractionDataset, RawInteraction, split_holdout
from modrec.features import FeatureTable, Provenance


def dataset_from_pairs(pairs, n_users=None, n_items=None, split=None):
    """Build a dataset from explicit (user_index, item_index) pairs.

    Index spaces are made dense by adding padding interactions only when the
    caller's pairs already cover every index; callers are expected to cover
    the index ranges themselves.
    """
    raws = [RawInteraction(f"u{u}", f"i{it}") for u, it in pairs]
    ds = InteractionDataset.from_raw(raws)
    if split is not None:
        ds.split = np.asarray(split, dtype=np.int8)
    return ds


def random_dataset(n_users=40, n_items=30, per_user=12, seed=7, split_seed=1):
    rng = np.random.default_rng(seed)
    raws = []
    for u in range(n_users):
        for it in rng.choice(n_items, size=per_user, replace=False):
            raws.append(RawInteraction(f"u{u}", f"i{it}"))
    return split_holdout(InteractionDataset.from_raw(raws), seed=split_seed)


def make_planted(
    n_users=500,
    n_items=200,
    n_clusters=4,
    per_user=12,
    in_cluster_prob=0.9,
    feature_dim=16,
    feature_noise=0.1,
    seed=0,
):
    """Cluster-preference data plus features aligned with the clusters.

    Items belong to balanced latent clusters and each user interacts mostly
    inside one preferred cluster. The informative feature table places every
    item near its cluster centroid, so content-aware models can generalize
    to in-cluster items the user has not touched.
    """
    rng = np.random.default_rng(seed)
    item_cluster = np.arange(n_items) % n_clusters
    user_pref = np.arange(n_users) % n_clusters
    cluster_items = [np.flatnonzero(item_cluster == c) for c in range(n_clusters)]

    raws = []
    for u in range(n_users):
        pref = user_pref[u]
        n_in = int(np.clip(rng.binomial(per_user, in_cluster_prob), 1, per_user))
        n_in = min(n_in, len(cluster_items[pref]))
        chosen = list(rng.choice(cluster_items[pref], size=n_in, replace=False))
        others = np.flatnonzero(item_cluster != pref)
        chosen += list(rng.choice(others, size=per_user - n_in, replace=False))
        for it in chosen:
            raws.append(RawInteraction(f"u{u}", f"i{it}"))
    ds = split_holdout(InteractionDataset.from_raw(raws), seed=seed)

    centroids = 2.0 * rng.standard_normal((n_clusters, feature_dim))
    matrix = centroids[
        [item_cluster[int(item_id[1:])] for item_id in ds.item_ids]
    ] + feature_noise * rng.standard_normal((ds.n_items, feature_dim))
    features = FeatureTable(
        list(ds.item_ids),
        matrix.astype(np.float32),
        Provenance("planted-clusters", "multimodal"),
    )
    return ds, features, item_cluster, user_pref
