"""Graph-based recommenders: light bipartite propagation and three
content-graph variants built on it.

The propagation primitive is linear neighborhood averaging over the
symmetrically normalized user-item graph, with the layer outputs averaged
(layer 0 included). The three content-aware models are deliberately small
reconstructions, flagged ``simplified_reimplementation`` in reports:

* ``LATTICE``: a learned convex combination of per-modality item-item
  similarity graphs enhances item embeddings on top of an MF backbone.
* ``FREEDOM``: a frozen combined item-item graph plus degree-sensitive
  edge pruning of the interaction graph, re-sampled every epoch.
* ``BM3``: contrastive alignment between propagated ID embeddings and
  projected content embeddings, with dropout views and stop-gradient
  targets instead of negative sampling.

Training runs through torch for autograd, in float64, single-threaded for
reproducibility; every random draw (init, triple sampling, pruning,
dropout) comes from seeded numpy streams.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch

from .base import (
    BaseRecommender,
    TrainingDivergedError,
    check_dataset,
    check_feature_matrix,
    check_seed,
)
from .datasets import InteractionDataset
from .evaluation import RankingRequest, evaluate_topk
from .features import FeatureTable

logger = logging.getLogger(__name__)


@dataclass
class NormalizedBipartiteGraph:
    """Train-split interaction graph with w(u, i) = 1 / sqrt(deg_u * deg_i)."""

    n_users: int
    n_items: int
    adj: sp.csr_matrix  # (n_users, n_items), normalized weights

    @classmethod
    def from_edges(cls, users, items, n_users: int, n_items: int) -> "NormalizedBipartiteGraph":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        deg_u = np.bincount(users, minlength=n_users).astype(np.float64)
        deg_i = np.bincount(items, minlength=n_items).astype(np.float64)
        weights = 1.0 / np.sqrt(deg_u[users] * deg_i[items])
        adj = sp.csr_matrix((weights, (users, items)), shape=(n_users, n_items))
        return cls(n_users, n_items, adj)

    @classmethod
    def from_dataset(cls, ds: InteractionDataset, split: str = "train"):
        users, items = ds.interactions_of(split)
        return cls.from_edges(users, items, ds.n_users, ds.n_items)


def lightgcn_propagate(
    graph: NormalizedBipartiteGraph,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    layers: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Average the embeddings over propagation layers 0..layers.

    Each layer replaces a node's embedding with the weighted sum of its
    neighbors' previous-layer embeddings; isolated nodes receive zero
    contribution and keep only their layer-0 component. ``layers=0`` is the
    identity.
    """
    if layers < 0:
        raise ValueError("layers must be >= 0")
    u = np.asarray(user_emb, dtype=np.float64)
    i = np.asarray(item_emb, dtype=np.float64)
    acc_u, acc_i = u.copy(), i.copy()
    adj = graph.adj
    adj_t = graph.adj.T.tocsr()
    for _ in range(layers):
        u, i = adj @ i, adj_t @ u
        acc_u += u
        acc_i += i
    return acc_u / (layers + 1), acc_i / (layers + 1)


@dataclass
class ItemItemGraph:
    """Symmetrically normalized top-k item similarity graph."""

    matrix: sp.csr_matrix
    k: int
    frozen: bool = False

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]

    def to_tsv(self, path) -> None:
        coo = self.matrix.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            for i, j, w in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i}\t{j}\t{w:.10g}\n")


def build_modality_item_graph(features, k: int) -> ItemItemGraph:
    """Top-k cosine neighbors per item, union-symmetrized, then D^-1/2 S D^-1/2.

    Only strictly positive similarities become edges; items with zero-norm
    feature rows end up with empty neighbor lists.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = features.matrix if isinstance(features, FeatureTable) else np.asarray(features)
    x = x.astype(np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    n_zero = int((norms == 0).sum())
    if n_zero:
        logger.info("%d zero-norm feature rows get no graph neighbors", n_zero)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    n = sim.shape[0]
    rows, cols, data = [], [], []
    for i in range(n):
        order = np.lexsort((np.arange(n), -sim[i]))
        for j in order[:k]:
            if sim[i, j] > 0:
                rows.append(i)
                cols.append(int(j))
                data.append(float(sim[i, j]))
    topk = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    symmetric = topk.maximum(topk.T)
    degree = np.asarray(symmetric.sum(axis=1)).ravel()
    inv_sqrt = np.divide(1.0, np.sqrt(degree), out=np.zeros_like(degree), where=degree > 0)
    normalized = sp.diags(inv_sqrt) @ symmetric @ sp.diags(inv_sqrt)
    return ItemItemGraph(normalized.tocsr(), k=k)


def _torch_sparse(csr: sp.spmatrix) -> torch.Tensor:
    coo = csr.tocoo()
    indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    values = torch.from_numpy(coo.data.astype(np.float64))
    return torch.sparse_coo_tensor(
        indices, values, size=coo.shape, check_invariants=False
    ).coalesce()


def _propagate_torch(adj, adj_t, user_emb, item_emb, layers: int):
    u, i = user_emb, item_emb
    acc_u, acc_i = u, i
    for _ in range(layers):
        u, i = torch.sparse.mm(adj, i), torch.sparse.mm(adj_t, u)
        acc_u = acc_u + u
        acc_i = acc_i + i
    return acc_u / (layers + 1), acc_i / (layers + 1)


class _TorchRankingModel(BaseRecommender):
    """Shared training loop: sampled-triple BPR over model-specific forwards."""

    uses_features = True

    def _build(self, ds: InteractionDataset, features: list[np.ndarray]) -> None:
        raise NotImplementedError

    def _epoch_setup(self, epoch: int, rng) -> None:
        pass

    def _forward(self) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def _normalize_features(self, ds, item_features) -> list[np.ndarray]:
        if item_features is None:
            raise ValueError(f"{type(self).__name__} requires at least one feature table")
        tables = item_features if isinstance(item_features, (list, tuple)) else [item_features]
        if not tables:
            raise ValueError(f"{type(self).__name__} requires at least one feature table")
        return [check_feature_matrix(t, ds) for t in tables]

    def _materialize(self) -> None:
        with torch.no_grad():
            users, items = self._forward()
        self.user_emb_ = users.detach().numpy().copy()
        self.item_emb_ = items.detach().numpy().copy()

    def score_user(self, user: int) -> np.ndarray:
        self._check_fitted()
        return self.item_emb_ @ self.user_emb_[user]

    def _new_param(self, shape, rng) -> torch.Tensor:
        arr = 0.01 * rng.standard_normal(shape)
        return torch.tensor(arr, dtype=torch.float64, requires_grad=True)

    def fit(self, ds: InteractionDataset, item_features=None):
        ds = check_dataset(ds)
        check_seed(self.seed)
        features = (
            self._normalize_features(ds, item_features) if self.uses_features else []
        )
        if not self.uses_features and item_features is not None:
            raise ValueError(f"{type(self).__name__} does not take item features")

        n_threads = torch.get_num_threads()
        torch.set_num_threads(1)
        try:
            return self._fit_inner(ds, features)
        finally:
            torch.set_num_threads(n_threads)

    def _fit_inner(self, ds: InteractionDataset, features: list[np.ndarray]):
        rng_init = np.random.default_rng([self.seed, 0])
        sampler = np.random.default_rng([self.seed, 1])
        self._rng_aux = np.random.default_rng([self.seed, 2])

        self.n_users_ = ds.n_users
        self.n_items_ = ds.n_items
        self._user_emb0 = self._new_param((ds.n_users, self.latent_dim), rng_init)
        self._item_emb0 = self._new_param((ds.n_items, self.latent_dim), rng_init)
        self._build(ds, features)
        self._params_list = [self._user_emb0, self._item_emb0] + list(self._extra_params())

        users, items = ds.interactions_of("train")
        if len(users) == 0:
            raise ValueError("training split is empty")
        train_sets = [set(arr.tolist()) for arr in ds.items_by_user("train")]
        has_valid = ds.interactions_of("valid")[0].size > 0
        self.history_ = []

        best_state: list[torch.Tensor] | None = None
        best_recall = -np.inf
        stale = 0
        n_train = len(users)
        for epoch in range(1, self.epochs + 1):
            self._epoch_setup(epoch, sampler)
            losses = []
            done = 0
            while done < n_train:
                size = min(self.batch_size, n_train - done)
                idx = sampler.integers(0, n_train, size=size)
                bu, bp = users[idx], items[idx]
                bn = self._sample_negatives(sampler, ds.n_items, bu, train_sets)
                loss = self._batch_loss(bu, bp, bn)
                loss.backward()
                with torch.no_grad():
                    for p in self._params_list:
                        if p.grad is not None:
                            p -= self.learning_rate * p.grad
                            p.grad.zero_()
                losses.append(float(loss.detach()))
                done += size
            if not all(torch.isfinite(p).all() for p in self._params_list):
                raise TrainingDivergedError(epoch)
            entry = {"epoch": epoch, "loss": float(np.mean(losses))}
            if has_valid and self.early_stop_patience > 0 and epoch % self.eval_every == 0:
                self._materialize()
                report = evaluate_topk(
                    self, ds, RankingRequest(k=self.valid_k), target_split="valid"
                )
                entry["valid_recall"] = report.mean("recall")
                if entry["valid_recall"] > best_recall:
                    best_recall = entry["valid_recall"]
                    best_state = [p.detach().clone() for p in self._params_list]
                    stale = 0
                else:
                    stale += 1
            self.history_.append(entry)
            if best_state is not None and stale >= self.early_stop_patience:
                break
        if best_state is not None:
            with torch.no_grad():
                for p, saved in zip(self._params_list, best_state):
                    p.copy_(saved)
        self._materialize()
        return self

    @staticmethod
    def _sample_negatives(rng, n_items, users, train_sets) -> np.ndarray:
        neg = rng.integers(0, n_items, size=len(users))
        while True:
            bad = [i for i in range(len(users)) if int(neg[i]) in train_sets[users[i]]]
            if not bad:
                return neg
            neg[bad] = rng.integers(0, n_items, size=len(bad))

    def _extra_params(self) -> list[torch.Tensor]:
        return []

    def _batch_loss(self, bu, bp, bn) -> torch.Tensor:
        user_repr, item_repr = self._forward()
        zu = user_repr[torch.from_numpy(bu)]
        zp = item_repr[torch.from_numpy(bp)]
        zn = item_repr[torch.from_numpy(bn)]
        margin = (zu * (zp - zn)).sum(dim=1)
        loss = torch.nn.functional.softplus(-margin).mean()
        reg = (
            self._user_emb0[torch.from_numpy(bu)].pow(2).sum(1)
            + self._item_emb0[torch.from_numpy(bp)].pow(2).sum(1)
            + self._item_emb0[torch.from_numpy(bn)].pow(2).sum(1)
        ).mean()
        return loss + self.l2_reg * reg

    def checkpoint_tensors(self) -> dict[str, np.ndarray]:
        self._check_fitted()
        return {"user_emb": self.user_emb_.copy(), "item_emb": self.item_emb_.copy()}

    def load_checkpoint_tensors(self, tensors, n_users: int, n_items: int):
        self.user_emb_ = np.asarray(tensors["user_emb"], dtype=np.float64)
        self.item_emb_ = np.asarray(tensors["item_emb"], dtype=np.float64)
        self.n_users_ = n_users
        self.n_items_ = n_items
        self.history_ = []
        return self


class LightGCN(_TorchRankingModel):
    """Linear propagation over the interaction graph, trained with BPR."""

    uses_features = False

    def __init__(
        self,
        latent_dim: int = 64,
        learning_rate: float = 0.01,
        l2_reg: float = 0.01,
        layers: int = 3,
        epochs: int = 100,
        batch_size: int = 1024,
        seed: int = 0,
        early_stop_patience: int = 5,
        eval_every: int = 1,
        valid_k: int = 20,
    ):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.layers = layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.early_stop_patience = early_stop_patience
        self.eval_every = eval_every
        self.valid_k = valid_k

    def _build(self, ds, features):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        graph = NormalizedBipartiteGraph.from_dataset(ds, "train")
        self._adj = _torch_sparse(graph.adj)
        self._adj_t = _torch_sparse(graph.adj.T.tocsr())

    def _forward(self):
        return _propagate_torch(
            self._adj, self._adj_t, self._user_emb0, self._item_emb0, self.layers
        )


class LATTICE(_TorchRankingModel):
    """MF backbone plus item enhancement over learned modality graph weights.

    Per modality a frozen top-k cosine item graph is built from the feature
    table; a softmax over learnable scalars mixes them, the mixed graph
    smooths the item ID embeddings, and the normalized result is added to
    the item representation.
    """

    def __init__(
        self,
        latent_dim: int = 64,
        learning_rate: float = 0.01,
        l2_reg: float = 0.01,
        graph_k: int = 10,
        graph_layers: int = 1,
        epochs: int = 100,
        batch_size: int = 1024,
        seed: int = 0,
        early_stop_patience: int = 5,
        eval_every: int = 1,
        valid_k: int = 20,
    ):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.graph_k = graph_k
        self.graph_layers = graph_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.early_stop_patience = early_stop_patience
        self.eval_every = eval_every
        self.valid_k = valid_k

    def _build(self, ds, features):
        self.modality_graphs_ = [build_modality_item_graph(f, self.graph_k) for f in features]
        self._graphs = [_torch_sparse(g.matrix) for g in self.modality_graphs_]
        self._alpha = torch.zeros(len(features), dtype=torch.float64, requires_grad=True)

    def _extra_params(self):
        return [self._alpha]

    def modality_weights(self) -> np.ndarray:
        with torch.no_grad():
            return torch.softmax(self._alpha, dim=0).numpy()

    def _forward(self):
        weights = torch.softmax(self._alpha, dim=0)
        h = self._item_emb0
        for _ in range(self.graph_layers):
            h = sum(w * torch.sparse.mm(g, h) for w, g in zip(weights, self._graphs))
        norms = torch.linalg.vector_norm(h, dim=1, keepdim=True).clamp(min=1e-12)
        return self._user_emb0, self._item_emb0 + h / norms


class FREEDOM(_TorchRankingModel):
    """Frozen combined item graph + degree-sensitive interaction-edge pruning.

    The item-item graph is combined once from fixed modality weights and
    never updated. Every epoch a fraction of train edges is dropped, sampled
    with probability proportional to 1 / sqrt(deg_u * deg_i), and the light
    propagation runs on the pruned graph.
    """

    def __init__(
        self,
        latent_dim: int = 64,
        learning_rate: float = 0.01,
        l2_reg: float = 0.01,
        graph_k: int = 10,
        modality_weights: tuple[float, ...] | None = None,
        prune_ratio: float = 0.2,
        layers: int = 3,
        epochs: int = 100,
        batch_size: int = 1024,
        seed: int = 0,
        early_stop_patience: int = 5,
        eval_every: int = 1,
        valid_k: int = 20,
    ):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.graph_k = graph_k
        self.modality_weights = modality_weights
        self.prune_ratio = prune_ratio
        self.layers = layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.early_stop_patience = early_stop_patience
        self.eval_every = eval_every
        self.valid_k = valid_k

    def _build(self, ds, features):
        if not 0.0 <= self.prune_ratio < 1.0:
            raise ValueError("prune_ratio must be in [0, 1)")
        weights = self.modality_weights
        if weights is None:
            weights = [1.0 / len(features)] * len(features)
        if len(weights) != len(features) or abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("modality_weights must match the feature tables and sum to 1")
        combined = sum(
            w * build_modality_item_graph(f, self.graph_k).matrix
            for w, f in zip(weights, features)
        )
        self.item_graph_ = ItemItemGraph(sp.csr_matrix(combined), k=self.graph_k, frozen=True)
        self._item_graph_torch = _torch_sparse(self.item_graph_.matrix)
        self._edges = ds.interactions_of("train")
        users, items = self._edges
        deg_u = np.bincount(users, minlength=ds.n_users).astype(np.float64)
        deg_i = np.bincount(items, minlength=ds.n_items).astype(np.float64)
        self._drop_probs = 1.0 / np.sqrt(deg_u[users] * deg_i[items])
        self._drop_probs /= self._drop_probs.sum()
        self._warned_isolated = False
        self._set_bipartite(np.arange(len(users)))

    def _set_bipartite(self, keep_idx: np.ndarray) -> None:
        users, items = self._edges
        graph = NormalizedBipartiteGraph.from_edges(
            users[keep_idx], items[keep_idx], self.n_users_, self.n_items_
        )
        isolated = int((np.diff(graph.adj.indptr) == 0).sum())
        if isolated and not self._warned_isolated:
            logger.warning(
                "edge pruning left %d users isolated; they propagate only their own embedding",
                isolated,
            )
            self._warned_isolated = True
        self._adj = _torch_sparse(graph.adj)
        self._adj_t = _torch_sparse(graph.adj.T.tocsr())

    def _epoch_setup(self, epoch, rng):
        n_edges = len(self._edges[0])
        n_drop = int(self.prune_ratio * n_edges)
        if n_drop == 0:
            return
        drop = rng.choice(n_edges, size=n_drop, replace=False, p=self._drop_probs)
        keep = np.setdiff1d(np.arange(n_edges), drop, assume_unique=True)
        self._set_bipartite(keep)

    def _forward(self):
        users, items = _propagate_torch(
            self._adj, self._adj_t, self._user_emb0, self._item_emb0, self.layers
        )
        enhanced = torch.sparse.mm(self._item_graph_torch, self._item_emb0)
        return users, items + enhanced


class BM3(_TorchRankingModel):
    """Contrastive multimodal alignment without negative sampling.

    Propagated ID embeddings provide the recommendation signal; per modality
    a linear projection maps content features into the same space and is
    pulled toward the (stop-gradient) item embedding, with dropout views
    providing the masked self-alignment term.
    """

    def __init__(
        self,
        latent_dim: int = 64,
        learning_rate: float = 0.01,
        l2_reg: float = 0.01,
        layers: int = 3,
        dropout: float = 0.3,
        epochs: int = 100,
        batch_size: int = 1024,
        seed: int = 0,
        early_stop_patience: int = 5,
        eval_every: int = 1,
        valid_k: int = 20,
    ):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.layers = layers
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.early_stop_patience = early_stop_patience
        self.eval_every = eval_every
        self.valid_k = valid_k

    def _build(self, ds, features):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        graph = NormalizedBipartiteGraph.from_dataset(ds, "train")
        self._adj = _torch_sparse(graph.adj)
        self._adj_t = _torch_sparse(graph.adj.T.tocsr())
        rng = np.random.default_rng([self.seed, 3])
        self._features = [torch.tensor(f, dtype=torch.float64) for f in features]
        self._projections = [
            torch.tensor(
                0.01 * rng.standard_normal((f.shape[1], self.latent_dim)),
                dtype=torch.float64,
                requires_grad=True,
            )
            for f in features
        ]

    def _extra_params(self):
        return list(self._projections)

    def _forward(self):
        return _propagate_torch(
            self._adj, self._adj_t, self._user_emb0, self._item_emb0, self.layers
        )

    def _drop(self, x: torch.Tensor) -> torch.Tensor:
        if self.dropout == 0.0:
            return x
        mask = (self._rng_aux.random(tuple(x.shape)) >= self.dropout) / (1.0 - self.dropout)
        return x * torch.tensor(mask, dtype=torch.float64)

    def _batch_loss(self, bu, bp, bn) -> torch.Tensor:
        # bn is ignored: this objective has no negative sampling.
        cos = torch.nn.functional.cosine_similarity
        user_repr, item_repr = self._forward()
        zu = user_repr[torch.from_numpy(bu)]
        zi = item_repr[torch.from_numpy(bp)]
        loss = (1 - cos(self._drop(zu), zi.detach())).mean()
        loss = loss + (1 - cos(self._drop(zi), zu.detach())).mean()
        for feats, proj in zip(self._features, self._projections):
            em = feats[torch.from_numpy(bp)] @ proj
            loss = loss + (1 - cos(em, zi.detach())).mean()
            loss = loss + (1 - cos(self._drop(em), em.detach())).mean()
        reg = (
            self._user_emb0[torch.from_numpy(bu)].pow(2).sum(1)
            + self._item_emb0[torch.from_numpy(bp)].pow(2).sum(1)
        ).mean()
        return loss + self.l2_reg * reg
