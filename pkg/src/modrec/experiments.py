"""Experiment orchestration: grid search, noise ablations, extractor
benchmarking with Borda aggregation, and the attribute side-content study.

Reports are plain dicts ready for JSON, and every report carries provenance:
a hash of the configuration that produced it, the seed list, and the package
version.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .datasets import InteractionDataset
from .evaluation import EvalReport, RankingRequest, evaluate_topk, paired_significance
from .base import TrainingDivergedError
from .features import FeatureTable, fit_moments, gen_gaussian_noise, gen_multivariate_noise
from .keywords import (
    PromptSchema,
    build_attribute_matrix,
    build_vocabulary,
    load_answers_tsv,
    parse_answers,
)
from .neighbors import AttributeItemKNN, ItemKNN, MostPop, RandomRec

logger = logging.getLogger(__name__)

DEFAULT_LEARNED_AXES = {
    "learning_rate": [0.0001, 0.0005, 0.001, 0.005, 0.01],
    "l2_reg": [0.01, 0.1],
    "latent_dim": [64, 128, 256],
}

DEFAULT_KNN_AXES = {
    "similarity": ["cosine", "jaccard", "dot", "asym", "tversky"],
    "neighbors": [5, 10, 20, 50, 100],
    "weighting": ["none", "tf_idf", "bm25"],
}

LEARNED_MODELS = ("bprmf", "vbpr", "lightgcn", "lattice", "freedom", "bm3")
KNN_MODELS = ("itemknn", "attr-itemknn")
SIMPLIFIED_REIMPLEMENTATIONS = ("lattice", "freedom", "bm3")


def make_model(name: str, params: dict):
    """Instantiate a recommender by its registry name."""
    if name == "itemknn":
        return ItemKNN(**params)
    if name == "attr-itemknn":
        return AttributeItemKNN(**params)
    if name == "mostpop":
        return MostPop(**params)
    if name == "random":
        return RandomRec(**params)
    if name == "bprmf":
        from .factor import BPRMF

        return BPRMF(**params)
    if name == "vbpr":
        from .factor import VBPR

        return VBPR(**params)
    if name in ("lightgcn", "lattice", "freedom", "bm3"):
        from . import graph

        cls = {"lightgcn": graph.LightGCN, "lattice": graph.LATTICE,
               "freedom": graph.FREEDOM, "bm3": graph.BM3}[name]
        return cls(**params)
    raise ValueError(f"unknown model {name!r}")


def default_axes(model: str) -> dict[str, list]:
    return DEFAULT_LEARNED_AXES if model in LEARNED_MODELS else (
        DEFAULT_KNN_AXES if model in KNN_MODELS else {}
    )


def fit_model(name: str, params: dict, ds: InteractionDataset, features=None, attributes=None):
    model = make_model(name, params)
    if name == "attr-itemknn":
        return model.fit(ds, attributes=attributes)
    if getattr(model, "uses_features", False):
        return model.fit(ds, item_features=features)
    return model.fit(ds)


def enumerate_grid(axes: dict[str, list]) -> list[dict]:
    """All axis combinations, in deterministic declaration order."""
    if not axes:
        return [{}]
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def config_key(config: dict) -> str:
    return json.dumps(config, sort_keys=True, default=str)


def config_hash(config) -> str:
    return hashlib.sha256(config_key(config).encode("utf-8")).hexdigest()[:16]


def make_provenance(config, seeds=()) -> dict:
    return {
        "config_hash": config_hash(config),
        "seeds": list(seeds),
        "version": __version__,
    }


def select_best(trace: list[dict]) -> dict:
    """Pick the winning grid point from a stored trace.

    Highest validation Recall wins; ties fall back to higher nDCG, then to
    the lexicographically smallest canonical config string, so re-running
    selection on a persisted trace is idempotent.
    """
    ok = [t for t in trace if t.get("status") == "ok"]
    if not ok:
        raise ValueError("every grid point failed; nothing to select")
    return min(
        ok,
        key=lambda t: (
            -t["valid_metrics"]["recall"],
            -t["valid_metrics"]["ndcg"],
            config_key(t["config"]),
        ),
    )


@dataclass
class GridResult:
    model_name: str
    best_config: dict
    best_model: object
    valid_report: EvalReport
    test_report: EvalReport
    trace: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "model": self.model_name,
            "simplified_reimplementation": self.model_name in SIMPLIFIED_REIMPLEMENTATIONS,
            "best_config": self.best_config,
            "valid_metrics_pct": self.valid_report.percentages(),
            "test_metrics_pct": self.test_report.percentages(),
            "trace": self.trace,
            "provenance": self.provenance,
        }


def _fit_grid_point(model_name, config, params, ds, features, attributes, k):
    entry = {"config": config, "params": params}
    try:
        model = fit_model(model_name, params, ds, features, attributes)
    except TrainingDivergedError as exc:
        entry.update(status="failed", error=str(exc))
        logger.warning("grid point failed: %s (%s)", config, exc)
        return entry, None, None
    valid_report = evaluate_topk(model, ds, RankingRequest(k=k), target_split="valid")
    entry.update(
        status="ok",
        valid_metrics={m: valid_report.mean(m) for m in ("recall", "ndcg", "hr")},
    )
    return entry, model, valid_report


def run_grid(
    model_name: str,
    ds: InteractionDataset,
    axes: dict[str, list] | None = None,
    features=None,
    attributes=None,
    base_params: dict | None = None,
    k: int = 20,
    n_jobs: int = 1,
) -> GridResult:
    """Train every grid point, select on validation Recall, test once.

    Diverged points are recorded as failed and skipped. The selected point's
    fitted model is reused for the test evaluation; nothing is retrained.
    Points are independent (each owns its RNG streams), so ``n_jobs`` may
    run them in parallel without changing the outcome.
    """
    axes = default_axes(model_name) if axes is None else axes
    base_params = dict(base_params or {})
    configs = enumerate_grid(axes)
    if not configs:
        raise ValueError("empty grid")

    jobs = [
        (config, {**base_params, **config}) for config in configs
    ]
    if n_jobs == 1:
        results = [
            _fit_grid_point(model_name, config, params, ds, features, attributes, k)
            for config, params in jobs
        ]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_fit_grid_point)(model_name, config, params, ds, features, attributes, k)
            for config, params in jobs
        )
    trace = [entry for entry, _, _ in results]
    candidates = [
        (entry, model, report) for entry, model, report in results if model is not None
    ]

    best_entry = select_best(trace)
    best_model, best_valid = next(
        (model, rep) for entry, model, rep in candidates if entry is best_entry
    )
    test_report = evaluate_topk(best_model, ds, RankingRequest(k=k), target_split="test")
    return GridResult(
        model_name=model_name,
        best_config=best_entry["config"],
        best_model=best_model,
        valid_report=best_valid,
        test_report=test_report,
        trace=trace,
        provenance=make_provenance(
            {"model": model_name, "axes": axes, "base": base_params, "k": k},
            seeds=[base_params.get("seed", 0)],
        ),
    )


def run_noise_ablation(
    model_name: str,
    ds: InteractionDataset,
    reference: FeatureTable,
    seeds: list[int],
    axes: dict[str, list] | None = None,
    base_params: dict | None = None,
    k: int = 20,
    shrinkage: float = 0.1,
    conditions: dict | None = None,
) -> dict:
    """Compare a model on noise features vs. the reference features.

    The three conditions are i.i.d. Gaussian noise of the reference
    dimensionality, moment-matched multivariate noise, and the reference
    (semantic) table itself; each runs a full grid per seed. The report
    carries mean and std of test Recall per condition and the paired
    significance of semantic vs. each noise condition across seeds.
    """
    if reference.item_ids != list(ds.item_ids):
        raise ValueError("reference features must be aligned to the dataset")
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    base_params = dict(base_params or {})

    if conditions is None:
        moments = fit_moments(reference, shrinkage=shrinkage)
        conditions = {
            "gaussian": lambda seed: gen_gaussian_noise(
                ds.n_items, reference.dim, seed=seed, item_ids=list(ds.item_ids)
            ),
            "multivariate": lambda seed: gen_multivariate_noise(
                moments, ds.n_items, seed=seed, item_ids=list(ds.item_ids)
            ),
            "semantic": lambda seed: reference,
        }

    recalls: dict[str, list[float]] = {name: [] for name in conditions}
    runs: list[dict] = []
    for seed in seeds:
        for name, factory in conditions.items():
            table = factory(seed) if callable(factory) else factory
            params = {**base_params, "seed": seed}
            result = run_grid(model_name, ds, axes=axes, features=table,
                              base_params=params, k=k)
            recall = result.test_report.mean("recall")
            recalls[name].append(recall)
            runs.append(
                {
                    "condition": name,
                    "seed": seed,
                    "best_config": result.best_config,
                    "test_metrics_pct": result.test_report.percentages(),
                }
            )

    summary = {
        name: {
            "mean_recall_pct": round(100.0 * float(np.mean(vals)), 3),
            "std_recall_pct": round(100.0 * float(np.std(vals)), 3),
        }
        for name, vals in recalls.items()
    }
    significance = {}
    semantic = recalls.get("semantic")
    if semantic is not None and len(seeds) >= 2:
        for other in conditions:
            if other == "semantic":
                continue
            result = paired_significance(semantic, recalls[other])
            significance[f"semantic_vs_{other}"] = {
                "p_value": result.p_value,
                "test": result.test_name,
                "degenerate": result.degenerate,
            }
    return {
        "model": model_name,
        "simplified_reimplementation": model_name in SIMPLIFIED_REIMPLEMENTATIONS,
        "conditions": summary,
        "significance": significance,
        "runs": runs,
        "noise_shrinkage": shrinkage,
        "provenance": make_provenance(
            {"model": model_name, "axes": axes, "base": base_params, "k": k}, seeds
        ),
    }


class MissingCellError(KeyError):
    """A (model, dataset, extractor) cell required for ranking is absent."""


@dataclass
class BordaTable:
    """Borda scores per dataset and overall, with the final extractor ranking."""

    extractors: list[str]
    datasets: list[str]
    models: list[str]
    per_dataset: dict[str, dict[str, float]]
    overall: dict[str, float]
    overall_rank: dict[str, int]

    def dataset_sum(self, dataset: str) -> float:
        return sum(self.per_dataset[dataset].values())

    def as_dict(self) -> dict:
        return {
            "extractors": self.extractors,
            "datasets": self.datasets,
            "models": self.models,
            "per_dataset": self.per_dataset,
            "overall": self.overall,
            "overall_rank": self.overall_rank,
        }

    def to_tsv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write("rank\textractor\t" + "\t".join(self.datasets) + "\toverall\n")
            for ex in sorted(self.extractors, key=lambda e: self.overall_rank[e]):
                cells = "\t".join(f"{self.per_dataset[d][ex]:g}" for d in self.datasets)
                fh.write(f"{self.overall_rank[ex]}\t{ex}\t{cells}\t{self.overall[ex]:g}\n")


def borda_count(
    recall_table: dict[tuple[str, str, str], float],
    extractors: list[str] | None = None,
    models: list[str] | None = None,
    datasets: list[str] | None = None,
) -> BordaTable:
    """Rank-aggregate Recall values over (model, dataset) contests.

    Within each contest the extractors are ranked by Recall descending and
    awarded n_extractors - rank points (rank 1-based), tied values sharing
    the mean of their positions' points. Dataset scores sum over models,
    the overall score sums over datasets, and the overall rank orders by
    overall score descending.
    """

    def _axis(index: int, given):
        if given is not None:
            return list(given)
        seen = dict.fromkeys(key[index] for key in recall_table)
        return list(seen)

    models = _axis(0, models)
    datasets = _axis(1, datasets)
    extractors = _axis(2, extractors)
    n = len(extractors)

    per_dataset = {d: dict.fromkeys(extractors, 0.0) for d in datasets}
    for d in datasets:
        for m in models:
            try:
                values = np.array([recall_table[(m, d, e)] for e in extractors])
            except KeyError:
                missing = next(
                    e for e in extractors if (m, d, e) not in recall_table
                )
                raise MissingCellError(
                    f"missing Recall cell (model={m!r}, dataset={d!r}, extractor={missing!r})"
                ) from None
            ranks = rankdata(-values, method="average")
            for e, rank in zip(extractors, ranks):
                per_dataset[d][e] += float(n - rank)
    overall = {e: sum(per_dataset[d][e] for d in datasets) for e in extractors}
    order = sorted(extractors, key=lambda e: (-overall[e], extractors.index(e)))
    overall_rank = {e: pos + 1 for pos, e in enumerate(order)}
    return BordaTable(extractors, datasets, models, per_dataset, overall, overall_rank)


def load_recall_table_tsv(path) -> dict[tuple[str, str, str], float]:
    """Read ``model<TAB>dataset<TAB>extractor<TAB>recall`` rows."""
    table: dict[tuple[str, str, str], float] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("model\t"):
                continue
            model, dataset, extractor, recall = line.split("\t")
            table[(model, dataset, extractor)] = float(recall)
    return table


def assemble_benchmark_report(cells: dict[tuple[str, str, str], dict], k: int = 20) -> dict:
    """Build the benchmark table from per-cell results.

    Each cell holds ``metrics_pct`` and optionally ``per_user`` samples.
    Best and second-best extractors are marked per (model, dataset, metric);
    the significance star compares the best against the second-best on
    per-user samples when they are available. Borda aggregation runs on the
    Recall column.
    """
    models = list(dict.fromkeys(key[0] for key in cells))
    datasets = list(dict.fromkeys(key[1] for key in cells))
    extractors = list(dict.fromkeys(key[2] for key in cells))

    markers: dict[str, dict] = {}
    for m in models:
        for d in datasets:
            for metric in ("recall", "ndcg", "hr"):
                scored = sorted(
                    extractors,
                    key=lambda e: (-cells[(m, d, e)]["metrics_pct"][metric], extractors.index(e)),
                )
                best, second = scored[0], scored[1] if len(scored) > 1 else None
                star = False
                p_value = None
                best_samples = cells[(m, d, best)].get("per_user")
                second_samples = cells[(m, d, second)].get("per_user") if second else None
                if best_samples is not None and second_samples is not None:
                    result = paired_significance(best_samples[metric], second_samples[metric])
                    p_value = result.p_value
                    star = result.p_value < 0.05
                markers[f"{m}/{d}/{metric}"] = {
                    "best": best,
                    "second": second,
                    "significant": star,
                    "p_value": p_value,
                }

    recall_table = {key: cell["metrics_pct"]["recall"] for key, cell in cells.items()}
    borda = borda_count(recall_table, extractors=extractors, models=models, datasets=datasets)
    rows = [
        {"model": m, "dataset": d, "extractor": e, "metrics_pct": cells[(m, d, e)]["metrics_pct"]}
        for (m, d, e) in cells
    ]
    return {
        "k": k,
        "rows": rows,
        "markers": markers,
        "borda": borda.as_dict(),
        "simplified_reimplementations": [
            m for m in models if m in SIMPLIFIED_REIMPLEMENTATIONS
        ],
    }


def run_extractor_benchmark(
    datasets: dict[str, InteractionDataset],
    features: dict[str, dict[str, FeatureTable]],
    models: list[str],
    axes: dict[str, list] | None = None,
    base_params: dict | None = None,
    k: int = 20,
) -> dict:
    """Grid-search every (model, dataset, extractor) cell and assemble the table.

    ``features[extractor][dataset]`` supplies the aligned feature table for
    each cell.
    """
    cells: dict[tuple[str, str, str], dict] = {}
    for model in models:
        for ds_name, ds in datasets.items():
            for extractor, by_dataset in features.items():
                table = by_dataset[ds_name]
                result = run_grid(
                    model, ds, axes=axes, features=table, base_params=base_params, k=k
                )
                cells[(model, ds_name, extractor)] = {
                    "metrics_pct": result.test_report.percentages(),
                    "per_user": result.test_report.per_user,
                    "best_config": result.best_config,
                }
    report = assemble_benchmark_report(cells, k=k)
    report["provenance"] = make_provenance(
        {"models": models, "datasets": list(datasets), "extractors": list(features),
         "axes": axes, "base": base_params, "k": k},
        seeds=[(base_params or {}).get("seed", 0)],
    )
    return report


def run_attribute_study(
    ds: InteractionDataset,
    answers_by_lvlm: dict[str, object],
    schema: PromptSchema,
    synonym_map: dict[str, str] | None = None,
    baseline_models: tuple[str, ...] = ("random", "mostpop", "itemknn", "bprmf", "lightgcn"),
    knn_axes: dict[str, list] | None = None,
    learned_axes: dict[str, list] | None = None,
    base_params: dict | None = None,
    top_k_keywords: int = 50,
    k: int = 20,
) -> dict:
    """Attribute Item-kNN on keyword features vs. the classical baselines.

    ``answers_by_lvlm`` maps a generator name to an answers TSV path or an
    in-memory list of (item_id, text) pairs. Each generator gets its own
    vocabulary, attribute matrix, and grid run.
    """
    base_params = dict(base_params or {})
    rows = []
    attribute_reports = {}
    for name, answers in answers_by_lvlm.items():
        pairs = load_answers_tsv(answers) if isinstance(answers, (str, Path)) else answers
        records = parse_answers(pairs, schema, synonym_map=synonym_map)
        vocab = build_vocabulary(records, schema, top_k=top_k_keywords)
        matrix, encode_report = build_attribute_matrix(records, vocab)
        uninformative = bool(matrix.n_items > 1 and (matrix.matrix == matrix.matrix[0]).all())
        if uninformative:
            logger.warning(
                "%s: identical attributes for every item; scores degenerate "
                "toward popularity-like behavior",
                name,
            )
        result = run_grid(
            "attr-itemknn", ds, axes=knn_axes, attributes=matrix, base_params=base_params, k=k
        )
        rows.append(
            {
                "model": "attr-itemknn",
                "extractor": name,
                "metrics_pct": result.test_report.percentages(),
                "best_config": result.best_config,
                "uninformative_attributes": uninformative,
            }
        )
        attribute_reports[name] = {
            "n_features": matrix.n_features,
            "parse_failed": encode_report.parse_failed,
            "missing_slot_counts": encode_report.missing_slot_counts,
            "unique_keywords": {
                slot: len(vocab.frequencies[slot]) for slot in vocab.slots
            },
        }
    for model in baseline_models:
        axes = knn_axes if model in KNN_MODELS else (
            learned_axes if model in LEARNED_MODELS else {}
        )
        result = run_grid(model, ds, axes=axes, base_params=base_params, k=k)
        rows.append(
            {
                "model": model,
                "extractor": None,
                "metrics_pct": result.test_report.percentages(),
                "best_config": result.best_config,
            }
        )
    return {
        "k": k,
        "rows": rows,
        "attribute_pipelines": attribute_reports,
        "provenance": make_provenance(
            {"schema": schema.domain_name, "baselines": list(baseline_models),
             "top_k_keywords": top_k_keywords, "base": base_params, "k": k},
            seeds=[base_params.get("seed", 0)],
        ),
    }


def write_plot_tsv(path, rows: list[dict], columns: list[str]) -> None:
    """Metric-per-condition TSV for external plotting."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(str(row.get(c, "")) for c in columns) + "\n")
