"""Top-K ranking evaluation and paired significance testing.

Every user with at least one target item is scored over the full item set,
items from masked splits are removed from the candidate pool, and the top-K
(ties broken by ascending item index) is compared against the target set:

    Recall@K = |hits| / |targets|
    HR@K     = 1 if |hits| >= 1 else 0
    nDCG@K   = DCG / IDCG with binary relevance,
               DCG = sum over hits at rank r of 1 / log2(r + 1),
               IDCG = sum_{r=1..min(K, |targets|)} 1 / log2(r + 1)

Aggregates are means over evaluated users; report output is in percent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.stats

from .datasets import InteractionDataset

METRICS = ("recall", "ndcg", "hr")


@dataclass
class RankingRequest:
    """Cutoff and masking policy for one evaluation pass.

    When ``mask_splits`` is None it defaults by target: evaluating valid
    masks train; evaluating test masks train and valid (leakage prevention).
    """

    k: int = 20
    mask_splits: tuple[str, ...] | None = None

    def resolved_mask(self, target_split: str) -> tuple[str, ...]:
        if self.mask_splits is not None:
            return tuple(self.mask_splits)
        return ("train",) if target_split == "valid" else ("train", "valid")


@dataclass
class EvalReport:
    k: int
    target_split: str
    mask_splits: tuple[str, ...]
    user_indices: np.ndarray
    per_user: dict[str, np.ndarray]
    n_evaluated_users: int
    n_skipped_users: int
    config: dict = field(default_factory=dict)
    significance: list[dict] = field(default_factory=list)

    def mean(self, metric: str) -> float:
        return float(self.per_user[metric].mean()) if self.n_evaluated_users else 0.0

    def percentages(self, decimals: int = 3) -> dict[str, float]:
        return {m: round(100.0 * self.mean(m), decimals) for m in METRICS}

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "target_split": self.target_split,
            "mask_splits": list(self.mask_splits),
            "n_evaluated_users": self.n_evaluated_users,
            "n_skipped_users": self.n_skipped_users,
            "metrics_pct": self.percentages(),
            "config": self.config,
            "significance": self.significance,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2), encoding="utf-8")

    def save_per_user_tsv(self, path, user_ids: list[str] | None = None) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("user_id\trecall\tndcg\thr\n")
            for row, u in enumerate(self.user_indices):
                uid = user_ids[u] if user_ids is not None else str(int(u))
                cells = "\t".join(
                    repr(float(self.per_user[m][row])) for m in ("recall", "ndcg", "hr")
                )
                fh.write(f"{uid}\t{cells}\n")


def topk_indices(scores: np.ndarray, k: int, exclude: np.ndarray | None = None) -> np.ndarray:
    """Indices of the k best candidates; equal scores favor the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.arange(scores.shape[0])
    if exclude is not None and len(exclude):
        keep = np.ones(scores.shape[0], dtype=bool)
        keep[np.asarray(exclude, dtype=np.int64)] = False
        candidates = candidates[keep]
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:k]]


def user_metrics(ranked: np.ndarray, targets: set[int], k: int) -> tuple[float, float, float]:
    """(recall, ndcg, hr) for one user's ranked top-k against its target set."""
    hits = 0
    dcg = 0.0
    for rank, item in enumerate(ranked[:k], start=1):
        if int(item) in targets:
            hits += 1
            dcg += 1.0 / math.log2(rank + 1)
    idcg = 0.0
    for rank in range(1, min(k, len(targets)) + 1):
        idcg += 1.0 / math.log2(rank + 1)
    recall = hits / len(targets)
    ndcg = dcg / idcg if idcg > 0 else 0.0
    hr = 1.0 if hits else 0.0
    return recall, ndcg, hr


def evaluate_topk(
    model,
    ds: InteractionDataset,
    request: RankingRequest | None = None,
    target_split: str = "test",
) -> EvalReport:
    """Evaluate a fitted scorer on one split of the dataset.

    Users with no target interactions, or with every item masked, are
    excluded from the averages and counted as skipped.
    """
    request = request or RankingRequest()
    if request.k < 1:
        raise ValueError("K must be >= 1")
    mask_splits = request.resolved_mask(target_split)
    targets_by_user = ds.items_by_user(target_split)
    masked_by_user = [ds.items_by_user(s) for s in mask_splits]

    user_rows: list[int] = []
    samples = {m: [] for m in METRICS}
    skipped = 0
    for u in range(ds.n_users):
        targets = targets_by_user[u]
        if targets.size == 0:
            skipped += 1
            continue
        masked = (
            np.concatenate([m[u] for m in masked_by_user]) if masked_by_user else np.empty(0)
        )
        if masked.size >= ds.n_items:
            skipped += 1
            continue
        scores = np.asarray(model.score_user(u), dtype=np.float64)
        if scores.shape != (ds.n_items,):
            raise ValueError(f"scorer returned shape {scores.shape}, expected ({ds.n_items},)")
        ranked = topk_indices(scores, request.k, exclude=masked)
        if masked.size and np.isin(ranked, masked).any():
            raise AssertionError("masked item leaked into the recommendation list")
        recall, ndcg, hr = user_metrics(ranked, set(int(t) for t in targets), request.k)
        user_rows.append(u)
        samples["recall"].append(recall)
        samples["ndcg"].append(ndcg)
        samples["hr"].append(hr)

    config = dict(model.get_params()) if hasattr(model, "get_params") else {}
    config["model"] = type(model).__name__
    return EvalReport(
        k=request.k,
        target_split=target_split,
        mask_splits=mask_splits,
        user_indices=np.asarray(user_rows, dtype=np.int64),
        per_user={m: np.asarray(v, dtype=np.float64) for m, v in samples.items()},
        n_evaluated_users=len(user_rows),
        n_skipped_users=skipped,
        config=config,
    )


@dataclass(frozen=True)
class SignificanceResult:
    p_value: float
    test_name: str
    degenerate: bool = False

    def __iter__(self):
        return iter((self.p_value, self.test_name))

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


def paired_significance(samples_a, samples_b, test: str = "t") -> SignificanceResult:
    """Two-sided paired test on per-user metric samples.

    All-zero differences return p = 1.0; a non-zero but constant difference
    has no variance for the t statistic and is reported as p = 0.0 with the
    degenerate flag set.
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("samples must be two equal-length 1-D arrays paired by user")
    if a.size < 2:
        raise ValueError("need at least 2 paired samples")
    if test not in ("t", "wilcoxon"):
        raise ValueError(f"unknown test {test!r}")
    name = "paired-t" if test == "t" else "wilcoxon"
    diffs = a - b
    if not diffs.any():
        return SignificanceResult(1.0, name, degenerate=True)
    if test == "t":
        # An (effectively) constant non-zero shift has no variance for the
        # t statistic: report it as overwhelming evidence, flagged.
        if np.ptp(diffs) <= 1e-12 * np.max(np.abs(diffs)):
            return SignificanceResult(0.0, name, degenerate=True)
        stat = scipy.stats.ttest_rel(a, b)
        return SignificanceResult(float(stat.pvalue), name)
    stat = scipy.stats.wilcoxon(a, b)
    return SignificanceResult(float(stat.pvalue), name)
