"""Pairwise-ranking matrix factorization, with and without item content.

Both models optimize the same objective over sampled (user, positive,
negative) triples:

    loss = softplus(-(s_pos - s_neg)) + l2 * ||involved params||^2

where the score is s(u, i) = b_i + p_u . q_i, plus theta_u . (E f_i) when
item features f_i are attached. Training is plain SGD on mini-batches of
triples, with the per-epoch triple count equal to the size of the training
split. Gradients are written out by hand and checked against central finite
differences in the test suite, so the loss/gradient pair below is the single
source of truth used by both the trainer and the tests.
"""

from __future__ import annotations

import numpy as np

from .base import (
    BaseRecommender,
    TrainingDivergedError,
    check_dataset,
    check_feature_matrix,
    check_seed,
)
from .datasets import InteractionDataset
from .evaluation import RankingRequest, evaluate_topk


def bpr_loss(score_pos, score_neg, params_norm_sq=0.0, l2: float = 0.0):
    """-ln sigmoid(pos - neg) + l2 * params_norm_sq, in softplus form."""
    margin = np.asarray(score_pos, dtype=np.float64) - np.asarray(score_neg, dtype=np.float64)
    return np.logaddexp(0.0, -margin) + l2 * np.asarray(params_norm_sq, dtype=np.float64)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def batch_loss_and_grads(
    params: dict[str, np.ndarray],
    users: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    l2: float,
    features: np.ndarray | None = None,
    use_bias: bool = True,
):
    """Mean triple loss over a batch and its gradients w.r.t. every parameter.

    ``params`` holds P (user factors), Q (item factors), b (item biases) and,
    when ``features`` is given, Theta (user content factors) and E (the
    feature projection). The regularizer covers exactly the parameters each
    triple touches; E is shared, so it enters once per triple.
    """
    P, Q, b = params["P"], params["Q"], params["b"]
    batch = len(users)
    Pu, Qp, Qn = P[users], Q[pos], Q[neg]
    margin = np.einsum("bd,bd->b", Pu, Qp - Qn)
    norm_sq = (Pu**2).sum(1) + (Qp**2).sum(1) + (Qn**2).sum(1)
    if use_bias:
        margin = margin + b[pos] - b[neg]
        norm_sq = norm_sq + b[pos] ** 2 + b[neg] ** 2
    content = features is not None
    if content:
        Theta, E = params["Theta"], params["E"]
        Tu = Theta[users]
        Cp, Cn = features[pos] @ E.T, features[neg] @ E.T
        margin = margin + np.einsum("bd,bd->b", Tu, Cp - Cn)
        norm_sq = norm_sq + (Tu**2).sum(1) + (E**2).sum()

    loss = float(np.mean(np.logaddexp(0.0, -margin) + l2 * norm_sq))
    # d softplus(-x) / dx = -sigmoid(-x)
    g = -_sigmoid(-margin) / batch
    reg = 2.0 * l2 / batch

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    np.add.at(grads["P"], users, g[:, None] * (Qp - Qn) + reg * Pu)
    np.add.at(grads["Q"], pos, g[:, None] * Pu + reg * Qp)
    np.add.at(grads["Q"], neg, -g[:, None] * Pu + reg * Qn)
    if use_bias:
        np.add.at(grads["b"], pos, g + reg * b[pos])
        np.add.at(grads["b"], neg, -g + reg * b[neg])
    if content:
        np.add.at(grads["Theta"], users, g[:, None] * (Cp - Cn) + reg * Tu)
        grads["E"] = (Tu * g[:, None]).T @ features[pos] - (Tu * g[:, None]).T @ features[neg]
        grads["E"] += 2.0 * l2 * E
    return loss, grads


def sample_negatives(rng, n_items: int, users: np.ndarray, train_sets) -> np.ndarray:
    """Uniform negatives, rejecting items the user interacted with in train."""
    neg = rng.integers(0, n_items, size=len(users))
    while True:
        bad = [i for i in range(len(users)) if int(neg[i]) in train_sets[users[i]]]
        if not bad:
            return neg
        neg[bad] = rng.integers(0, n_items, size=len(bad))


class BPRMF(BaseRecommender):
    """Matrix factorization with item bias, trained on the pairwise objective.

    Factors initialize from N(0, 0.01^2) and biases from zero; the
    initialization and sampling streams are keyed by the seed, so a fixed
    seed reproduces the final parameters bit-for-bit single-threaded.
    """

    def __init__(
        self,
        latent_dim: int = 64,
        learning_rate: float = 0.01,
        l2_reg: float = 0.01,
        epochs: int = 100,
        batch_size: int = 1024,
        seed: int = 0,
        early_stop_patience: int = 5,
        eval_every: int = 1,
        valid_k: int = 20,
        use_bias: bool = True,
    ):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.early_stop_patience = early_stop_patience
        self.eval_every = eval_every
        self.valid_k = valid_k
        self.use_bias = use_bias

    uses_features = False

    def _init_params(self, ds: InteractionDataset, rng) -> dict[str, np.ndarray]:
        d = self.latent_dim
        return {
            "P": 0.01 * rng.standard_normal((ds.n_users, d)),
            "Q": 0.01 * rng.standard_normal((ds.n_items, d)),
            "b": np.zeros(ds.n_items),
        }

    def _prepare_features(self, ds, item_features):
        if item_features is not None:
            raise ValueError(f"{type(self).__name__} does not take item features")
        return None

    def fit(self, ds: InteractionDataset, item_features=None):
        ds = check_dataset(ds)
        check_seed(self.seed)
        if self.latent_dim < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("latent_dim and batch_size must be >= 1, epochs >= 0")
        features = self._prepare_features(ds, item_features)

        rng_init = np.random.default_rng([self.seed, 0])
        sampler = np.random.default_rng([self.seed, 1])
        params = self._init_params(ds, rng_init)

        users, items = ds.interactions_of("train")
        if len(users) == 0:
            raise ValueError("training split is empty")
        train_sets = [set(arr.tolist()) for arr in ds.items_by_user("train")]
        has_valid = ds.interactions_of("valid")[0].size > 0

        self._params = params
        self._features = features
        self.n_items_ = ds.n_items
        self.n_users_ = ds.n_users
        self.history_ = []

        best: dict[str, np.ndarray] | None = None
        best_recall = -np.inf
        stale = 0
        n_train = len(users)
        for epoch in range(1, self.epochs + 1):
            losses = []
            done = 0
            while done < n_train:
                size = min(self.batch_size, n_train - done)
                idx = sampler.integers(0, n_train, size=size)
                bu, bp = users[idx], items[idx]
                bn = sample_negatives(sampler, ds.n_items, bu, train_sets)
                loss, grads = batch_loss_and_grads(
                    params, bu, bp, bn, self.l2_reg, features, self.use_bias
                )
                for key, grad in grads.items():
                    params[key] -= self.learning_rate * grad
                losses.append(loss)
                done += size
            if not all(np.isfinite(v).all() for v in params.values()):
                raise TrainingDivergedError(epoch)
            entry = {"epoch": epoch, "loss": float(np.mean(losses))}
            if has_valid and self.early_stop_patience > 0 and epoch % self.eval_every == 0:
                report = evaluate_topk(
                    self, ds, RankingRequest(k=self.valid_k), target_split="valid"
                )
                entry["valid_recall"] = report.mean("recall")
                if entry["valid_recall"] > best_recall:
                    best_recall = entry["valid_recall"]
                    best = {k: v.copy() for k, v in params.items()}
                    stale = 0
                else:
                    stale += 1
            self.history_.append(entry)
            if best is not None and stale >= self.early_stop_patience:
                break
        if best is not None:
            self._params = best
        self._finalize(ds)
        return self

    def _finalize(self, ds: InteractionDataset) -> None:
        self.user_factors_ = self._params["P"]
        self.item_factors_ = self._params["Q"]
        self.item_bias_ = self._params["b"]

    def score_user(self, user: int) -> np.ndarray:
        self._check_fitted()
        p = self._params["P"][user]
        scores = self._params["Q"] @ p
        if self.use_bias:
            scores = scores + self._params["b"]
        return scores

    def checkpoint_tensors(self) -> dict[str, np.ndarray]:
        self._check_fitted()
        return {k: v.copy() for k, v in self._params.items()}

    def load_checkpoint_tensors(self, tensors: dict[str, np.ndarray], n_users: int, n_items: int):
        self._params = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        self.n_users_ = n_users
        self.n_items_ = n_items
        self.history_ = []
        return self


class VBPR(BPRMF):
    """BPR-MF plus a content path: theta_u . (E f_i) on projected item features.

    With an all-zero feature table the content path contributes nothing and
    training matches BPR-MF step for step under the same seed.
    """

    uses_features = True

    def __init__(
        self,
        latent_dim: int = 64,
        learning_rate: float = 0.01,
        l2_reg: float = 0.01,
        epochs: int = 100,
        batch_size: int = 1024,
        seed: int = 0,
        early_stop_patience: int = 5,
        eval_every: int = 1,
        valid_k: int = 20,
        use_bias: bool = True,
        content_dim: int | None = None,
    ):
        super().__init__(
            latent_dim=latent_dim,
            learning_rate=learning_rate,
            l2_reg=l2_reg,
            epochs=epochs,
            batch_size=batch_size,
            seed=seed,
            early_stop_patience=early_stop_patience,
            eval_every=eval_every,
            valid_k=valid_k,
            use_bias=use_bias,
        )
        self.content_dim = content_dim

    def _prepare_features(self, ds, item_features):
        if item_features is None:
            raise ValueError("VBPR requires item features")
        if isinstance(item_features, (list, tuple)):
            if len(item_features) != 1:
                raise ValueError(
                    "VBPR takes a single feature table; fuse modalities with "
                    "concat_features first"
                )
            item_features = item_features[0]
        return check_feature_matrix(item_features, ds)

    def _init_params(self, ds, rng):
        params = super()._init_params(ds, rng)
        d_c = self.content_dim or self.latent_dim
        params["Theta"] = 0.01 * rng.standard_normal((ds.n_users, d_c))
        params["E"] = 0.01 * rng.standard_normal((d_c, self._features.shape[1]))
        return params

    def fit(self, ds: InteractionDataset, item_features=None):
        # _init_params needs the feature dim, so stash it before the base fit.
        self._features = self._prepare_features(check_dataset(ds), item_features)
        return super().fit(ds, item_features)

    def _finalize(self, ds) -> None:
        super()._finalize(ds)
        self.projection_ = self._params["E"]
        self.item_content_ = self._features @ self._params["E"].T

    def score_user(self, user: int) -> np.ndarray:
        self._check_fitted()
        scores = super().score_user(user)
        return scores + self.item_content_ @ self._params["Theta"][user]

    def checkpoint_tensors(self) -> dict[str, np.ndarray]:
        tensors = super().checkpoint_tensors()
        tensors["item_content"] = self.item_content_.copy()
        return tensors

    def load_checkpoint_tensors(self, tensors, n_users: int, n_items: int):
        tensors = dict(tensors)
        self.item_content_ = np.asarray(tensors.pop("item_content"), dtype=np.float64)
        return super().load_checkpoint_tensors(tensors, n_users, n_items)
