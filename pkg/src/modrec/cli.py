"""Command-line interface.

Subcommands cover the full workflow: ``prepare`` (k-core filter + split),
``features`` (noise, fusion, attribute encoding), ``train``/``evaluate``,
``grid``, ``ablate-noise``, ``benchmark-extractors``, ``attribute-study``,
``borda``, and ``significance``. Commands accept a JSON config file where
noted; any command-line flag overrides the config value of the same name.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import __version__
from .binio import read_checkpoint, write_checkpoint
from .datasets import (
    KCORE_PROFILES,
    InteractionDataset,
    compute_stats,
    kcore_filter,
    load_interactions,
    split_holdout,
)
from .evaluation import RankingRequest, evaluate_topk, paired_significance
from .features import (
    align_to_dataset,
    concat_features,
    fit_moments,
    gen_gaussian_noise,
    gen_multivariate_noise,
    load_features,
    save_features,
)
from .keywords import (
    BUILTIN_SCHEMAS,
    PromptSchema,
    build_attribute_matrix,
    build_vocabulary,
    load_answers_tsv,
    load_synonym_map,
    parse_answers,
    AttributeMatrix,
)
from .neighbors import ItemKNN, NeighborhoodModel
from . import experiments as xp


def _read_json(path_or_text):
    if path_or_text is None:
        return {}
    text = path_or_text
    if Path(path_or_text).is_file():
        text = Path(path_or_text).read_text(encoding="utf-8")
    return json.loads(text)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, default=str), encoding="utf-8")


def _load_schema(spec: str) -> PromptSchema:
    if spec in BUILTIN_SCHEMAS:
        return BUILTIN_SCHEMAS[spec]
    return PromptSchema.from_json(spec)


def _load_feature_tables(paths, ds, missing_policy):
    tables = []
    for path in paths:
        table = load_features(path)
        tables.append(align_to_dataset(table, ds, missing_policy=missing_policy).table)
    return tables


def _save_model(model, name: str, prefix: str, ds: InteractionDataset) -> None:
    meta = {
        "model": name,
        "params": model.get_params(),
        "n_users": ds.n_users,
        "n_items": ds.n_items,
        "version": __version__,
    }
    if isinstance(model, ItemKNN):
        model.model_.to_tsv(prefix + ".neighbors.tsv", list(ds.item_ids))
        meta["payload"] = "neighbors"
    elif hasattr(model, "checkpoint_tensors"):
        write_checkpoint(prefix + ".mmck", model.checkpoint_tensors())
        meta["payload"] = "mmck"
    else:
        meta["payload"] = "none"
    _write_json(prefix + ".meta.json", meta)


def _load_model(prefix: str, ds: InteractionDataset):
    meta = _read_json(prefix + ".meta.json")
    model = xp.make_model(meta["model"], meta["params"])
    if meta["payload"] == "neighbors":
        stored, ids = NeighborhoodModel.from_tsv(prefix + ".neighbors.tsv")
        if ids != list(ds.item_ids):
            raise click.ClickException("neighbor dump does not match the dataset's items")
        model.model_ = stored
        model.n_items_ = ds.n_items
        model.train_items_ = ds.items_by_user("train")
    elif meta["payload"] == "mmck":
        tensors = read_checkpoint(prefix + ".mmck")
        model.load_checkpoint_tensors(tensors, meta["n_users"], meta["n_items"])
    else:
        model.n_items_ = ds.n_items
    return model, meta


@click.group()
@click.version_option(__version__)
def main():
    """Train, evaluate, and benchmark content-aware recommenders."""


@main.command()
@click.option("--interactions", "path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["tsv", "csv"]), default="tsv")
@click.option("--profile", type=click.Choice(sorted(KCORE_PROFILES)), default=None,
              help="Dataset profile supplying the default k-core strength.")
@click.option("--k-core", type=int, default=None, help="One k for both users and items.")
@click.option("--k-user", type=int, default=None)
@click.option("--k-item", type=int, default=None)
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--strict/--lenient", default=False, show_default=True)
@click.option("--output", required=True, type=click.Path())
@click.option("--stats-json", type=click.Path(), default=None)
def prepare(path, fmt, profile, k_core, k_user, k_item, ratios, seed, strict, output,
            stats_json):
    """Load interactions, k-core filter, split 80/10/10, write the split TSV."""
    loaded = load_interactions(path, fmt=fmt, strict=strict)
    if loaded.malformed_count:
        click.echo(f"skipped {loaded.malformed_count} malformed rows", err=True)
    if k_core is None and profile is not None:
        k_core = KCORE_PROFILES[profile]
    k_user = k_user if k_user is not None else (k_core or 1)
    k_item = k_item if k_item is not None else (k_core or 1)
    filtered = kcore_filter(loaded.interactions, k_user, k_item)
    if not filtered:
        raise click.ClickException("k-core filtering removed every interaction")
    ds = InteractionDataset.from_raw(filtered)
    ratio_tuple = tuple(float(r) for r in ratios.split(","))
    ds = split_holdout(ds, ratio_tuple, seed=seed)
    ds.to_tsv(output)
    stats = compute_stats(ds)
    click.echo(json.dumps(stats.as_dict()))
    if stats_json:
        _write_json(stats_json, stats.as_dict())


@main.group()
def features():
    """Create or transform item feature tables."""


@features.command()
@click.option("--n-items", type=int, default=None)
@click.option("--dim", type=int, default=None)
@click.option("--like", type=click.Path(exists=True), default=None,
              help="Copy item ids and dimensionality from this feature file.")
@click.option("--ids-from-data", type=click.Path(exists=True), default=None,
              help="Take item ids (and count) from a split TSV.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", required=True, type=click.Path())
def gaussian(n_items, dim, like, ids_from_data, seed, output):
    """i.i.d. standard normal features."""
    ids = None
    if like:
        ref = load_features(like)
        n_items = n_items or ref.n_items
        dim = dim or ref.dim
        ids = ref.item_ids
    if ids_from_data:
        ids = list(InteractionDataset.from_tsv(ids_from_data).item_ids)
        n_items = len(ids)
    if not n_items or not dim:
        raise click.ClickException("provide --n-items and --dim, or --like/--ids-from-data")
    save_features(gen_gaussian_noise(n_items, dim, seed, item_ids=ids), output)


@features.command()
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--shrinkage", type=float, default=0.1, show_default=True)
@click.option("--n-items", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", required=True, type=click.Path())
def multivariate(reference, shrinkage, n_items, seed, output):
    """Noise matching the reference table's mean and covariance."""
    ref = load_features(reference)
    moments = fit_moments(ref, shrinkage=shrinkage)
    n = n_items or ref.n_items
    ids = ref.item_ids if n == ref.n_items else None
    save_features(gen_multivariate_noise(moments, n, seed, item_ids=ids), output)


@features.command()
@click.option("--inputs", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--l2-normalize/--no-l2-normalize", default=False, show_default=True)
@click.option("--output", required=True, type=click.Path())
def concat(inputs, l2_normalize, output):
    """Late fusion: concatenate feature tables over identical item sets."""
    tables = [load_features(p) for p in inputs]
    save_features(concat_features(tables, l2_normalize=l2_normalize), output)


@features.command("encode-attributes")
@click.option("--answers", required=True, type=click.Path(exists=True))
@click.option("--schema", required=True, help="baby | pets | clothing | schema JSON path")
@click.option("--synonyms", type=click.Path(exists=True), default=None)
@click.option("--top-k", type=int, default=50, show_default=True)
@click.option("--output", required=True, type=click.Path())
@click.option("--report-json", type=click.Path(), default=None)
def encode_attributes(answers, schema, synonyms, top_k, output, report_json):
    """Parse structured answers into the one-hot attribute matrix."""
    schema_obj = _load_schema(schema)
    synonym_map = load_synonym_map(synonyms) if synonyms else None
    records = parse_answers(load_answers_tsv(answers), schema_obj, synonym_map=synonym_map)
    vocab = build_vocabulary(records, schema_obj, top_k=top_k)
    matrix, report = build_attribute_matrix(records, vocab)
    matrix.to_tsv(output)
    payload = {
        "n_items": matrix.n_items,
        "n_features": matrix.n_features,
        "parse_failed": report.parse_failed,
        "missing_slot_counts": report.missing_slot_counts,
        "unique_keywords": {s: len(vocab.frequencies[s]) for s in vocab.slots},
    }
    click.echo(json.dumps(payload))
    if report_json:
        _write_json(report_json, payload)


def _collect_params(params, overrides):
    merged = dict(_read_json(params))
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


@main.command()
@click.option("--model", "model_name", required=True)
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--features", "feature_paths", multiple=True, type=click.Path(exists=True))
@click.option("--attributes", type=click.Path(exists=True), default=None)
@click.option("--missing-policy", type=click.Choice(["error", "zero_fill", "drop_items"]),
              default="zero_fill", show_default=True)
@click.option("--params", default=None, help="JSON file or literal with model parameters.")
@click.option("--latent-dim", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--l2-reg", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--checkpoint", required=True, help="Output path prefix.")
@click.option("--curve-log", type=click.Path(), default=None)
def train(model_name, data, feature_paths, attributes, missing_policy, params,
          latent_dim, learning_rate, l2_reg, epochs, batch_size, seed, checkpoint, curve_log):
    """Fit one model and write its checkpoint."""
    ds = InteractionDataset.from_tsv(data)
    merged = _collect_params(
        params,
        {
            "latent_dim": latent_dim,
            "learning_rate": learning_rate,
            "l2_reg": l2_reg,
            "epochs": epochs,
            "batch_size": batch_size,
            "seed": seed,
        },
    )
    tables = _load_feature_tables(feature_paths, ds, missing_policy) or None
    attr = AttributeMatrix.from_tsv(attributes) if attributes else None
    if tables and len(tables) == 1:
        tables = tables[0]
    model = xp.fit_model(model_name, merged, ds, features=tables, attributes=attr)
    _save_model(model, model_name, checkpoint, ds)
    if curve_log and hasattr(model, "history_"):
        _write_json(curve_log, model.history_)
    click.echo(f"saved checkpoint to {checkpoint}.meta.json")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, help="Checkpoint path prefix from train.")
@click.option("--split", "target_split", type=click.Choice(["valid", "test"]), default="test",
              show_default=True)
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--per-user-tsv", type=click.Path(), default=None)
def evaluate(data, checkpoint, target_split, k, report_path, per_user_tsv):
    """Rank all items for every evaluable user and print the metrics."""
    ds = InteractionDataset.from_tsv(data)
    model, _meta = _load_model(checkpoint, ds)
    report = evaluate_topk(model, ds, RankingRequest(k=k), target_split=target_split)
    click.echo(json.dumps(report.percentages()))
    if report_path:
        report.save_json(report_path)
    if per_user_tsv:
        report.save_per_user_tsv(per_user_tsv, user_ids=list(ds.user_ids))


@main.command()
@click.option("--model", "model_name", required=True)
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--features", "feature_paths", multiple=True, type=click.Path(exists=True))
@click.option("--attributes", type=click.Path(exists=True), default=None)
@click.option("--missing-policy", default="zero_fill", show_default=True)
@click.option("--axes", default=None, help="JSON file or literal with grid axes.")
@click.option("--base-params", default=None, help="JSON with fixed parameters.")
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path())
def grid(model_name, data, feature_paths, attributes, missing_policy, axes, base_params,
         k, report_path):
    """Grid search with selection on validation Recall@K."""
    ds = InteractionDataset.from_tsv(data)
    tables = _load_feature_tables(feature_paths, ds, missing_policy) or None
    if tables and len(tables) == 1:
        tables = tables[0]
    attr = AttributeMatrix.from_tsv(attributes) if attributes else None
    result = xp.run_grid(
        model_name,
        ds,
        axes=_read_json(axes) or None,
        features=tables,
        attributes=attr,
        base_params=_read_json(base_params),
        k=k,
    )
    _write_json(report_path, result.as_dict())
    click.echo(json.dumps({"best_config": result.best_config,
                           "test_metrics_pct": result.test_report.percentages()}))


@main.command("ablate-noise")
@click.option("--model", "model_name", required=True)
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--seeds", default="0,1,2,3,4", show_default=True)
@click.option("--axes", default=None)
@click.option("--base-params", default=None)
@click.option("--shrinkage", type=float, default=0.1, show_default=True)
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--plot-tsv", type=click.Path(), default=None)
def ablate_noise(model_name, data, reference, seeds, axes, base_params, shrinkage, k,
                 report_path, plot_tsv):
    """Noise-vs-semantic feature ablation for one model."""
    ds = InteractionDataset.from_tsv(data)
    ref = align_to_dataset(load_features(reference), ds, missing_policy="zero_fill").table
    report = xp.run_noise_ablation(
        model_name,
        ds,
        ref,
        seeds=[int(s) for s in seeds.split(",")],
        axes=_read_json(axes) or None,
        base_params=_read_json(base_params),
        k=k,
        shrinkage=shrinkage,
    )
    _write_json(report_path, report)
    click.echo(json.dumps(report["conditions"]))
    if plot_tsv:
        rows = [
            {"condition": run["condition"], "seed": run["seed"],
             "recall_pct": run["test_metrics_pct"]["recall"]}
            for run in report["runs"]
        ]
        xp.write_plot_tsv(plot_tsv, rows, ["condition", "seed", "recall_pct"])


@main.command("benchmark-extractors")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="JSON: datasets {name: split tsv}, extractors {name: {dataset: mmfe}}, "
                   "models [...], optional axes/base_params/k.")
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--borda-tsv", type=click.Path(), default=None)
def benchmark_extractors(config_path, report_path, borda_tsv):
    """Run the full (model x dataset x extractor) benchmark table."""
    config = _read_json(config_path)
    datasets = {
        name: InteractionDataset.from_tsv(path)
        for name, path in config["datasets"].items()
    }
    features = {}
    for extractor, by_dataset in config["extractors"].items():
        features[extractor] = {
            ds_name: align_to_dataset(
                load_features(path), datasets[ds_name], missing_policy="zero_fill"
            ).table
            for ds_name, path in by_dataset.items()
        }
    report = xp.run_extractor_benchmark(
        datasets,
        features,
        models=config["models"],
        axes=config.get("axes"),
        base_params=config.get("base_params"),
        k=config.get("k", 20),
    )
    _write_json(report_path, report)
    click.echo(json.dumps(report["borda"]["overall"]))
    if borda_tsv:
        table = xp.borda_count(
            {(r["model"], r["dataset"], r["extractor"]): r["metrics_pct"]["recall"]
             for r in report["rows"]}
        )
        table.to_tsv(borda_tsv)


@main.command("attribute-study")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--schema", required=True)
@click.option("--answers", "answers_specs", required=True, multiple=True,
              help="name=answers.tsv, repeatable.")
@click.option("--synonyms", type=click.Path(exists=True), default=None)
@click.option("--baselines", default="random,mostpop,itemknn,bprmf,lightgcn", show_default=True)
@click.option("--knn-axes", default=None)
@click.option("--learned-axes", default=None)
@click.option("--base-params", default=None)
@click.option("--top-k-keywords", type=int, default=50, show_default=True)
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path())
def attribute_study(data, schema, answers_specs, synonyms, baselines, knn_axes, learned_axes,
                    base_params, top_k_keywords, k, report_path):
    """Keyword side-content study: Attribute Item-kNN vs. classical baselines."""
    ds = InteractionDataset.from_tsv(data)
    answers = {}
    for spec in answers_specs:
        name, _, path = spec.partition("=")
        if not path:
            raise click.ClickException(f"--answers expects name=path, got {spec!r}")
        answers[name] = path
    report = xp.run_attribute_study(
        ds,
        answers,
        _load_schema(schema),
        synonym_map=load_synonym_map(synonyms) if synonyms else None,
        baseline_models=tuple(baselines.split(",")),
        knn_axes=_read_json(knn_axes) or None,
        learned_axes=_read_json(learned_axes) or None,
        base_params=_read_json(base_params),
        top_k_keywords=top_k_keywords,
        k=k,
    )
    _write_json(report_path, report)
    click.echo(json.dumps([{r["model"]: r["metrics_pct"]["recall"]} for r in report["rows"]]))


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="TSV: model, dataset, extractor, recall.")
@click.option("--output", "output_path", type=click.Path(), default=None)
@click.option("--tsv", "tsv_path", type=click.Path(), default=None)
def borda(input_path, output_path, tsv_path):
    """Aggregate a Recall table into Borda scores and ranks."""
    table = xp.borda_count(xp.load_recall_table_tsv(input_path))
    click.echo(json.dumps(table.as_dict()))
    if output_path:
        _write_json(output_path, table.as_dict())
    if tsv_path:
        table.to_tsv(tsv_path)


@main.command()
@click.option("--a", "path_a", required=True, type=click.Path(exists=True))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
@click.option("--metric", default="recall", show_default=True)
@click.option("--test", type=click.Choice(["t", "wilcoxon"]), default="t", show_default=True)
def significance(path_a, path_b, metric, test):
    """Paired test between two per-user sample TSVs (from evaluate --per-user-tsv)."""

    def _column(path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            idx = header.index(metric)
            return np.array([float(line.rstrip("\n").split("\t")[idx]) for line in fh if line.strip()])

    result = paired_significance(_column(path_a), _column(path_b), test=test)
    click.echo(json.dumps({
        "p_value": result.p_value,
        "test": result.test_name,
        "degenerate": result.degenerate,
        "significant": result.significant,
    }))


if __name__ == "__main__":
    main()
