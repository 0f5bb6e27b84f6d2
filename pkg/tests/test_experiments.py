"""Grid search, selection, Borda aggregation, and study orchestration."""

import json

import numpy as np
import pytest

from helpers import make_planted, random_dataset
from modrec import experiments as xp
from modrec.features import gen_gaussian_noise
from modrec.keywords import BUILTIN_SCHEMAS

EXTRACTORS = ["qwen2-vl", "phi-3.5-vi", "clip", "rnet50-sbert", "rnet50", "vit"]
MODELS = ["vbpr", "lattice", "bm3", "freedom"]
DATASETS = ["baby", "pets", "clothing"]

# Published Recall@20 benchmark values (percent), one row per model in the
# extractor order above.
REFERENCE_RECALL = {
    ("vbpr", "baby"): [7.690, 7.640, 7.490, 7.550, 7.400, 7.390],
    ("lattice", "baby"): [7.410, 7.330, 7.150, 7.450, 7.240, 7.200],
    ("bm3", "baby"): [7.630, 7.680, 7.670, 7.660, 7.640, 7.600],
    ("freedom", "baby"): [7.780, 7.530, 6.230, 7.810, 7.470, 7.420],
    ("vbpr", "pets"): [9.340, 9.260, 9.170, 9.230, 9.070, 8.990],
    ("lattice", "pets"): [9.030, 9.070, 8.740, 9.020, 8.820, 8.820],
    ("bm3", "pets"): [10.360, 10.290, 9.510, 9.510, 9.930, 9.700],
    ("freedom", "pets"): [9.120, 8.950, 7.740, 9.470, 8.730, 8.840],
    ("vbpr", "clothing"): [4.060, 3.990, 3.960, 3.940, 3.910, 3.940],
    ("lattice", "clothing"): [4.050, 3.850, 3.771, 3.910, 3.750, 3.780],
    ("bm3", "clothing"): [4.680, 4.700, 3.990, 3.950, 4.090, 4.150],
    ("freedom", "clothing"): [4.130, 4.020, 2.910, 4.220, 3.770, 3.900],
}

EXPECTED_BORDA = {
    "baby": {"qwen2-vl": 14.0, "phi-3.5-vi": 15.0, "rnet50-sbert": 16.0,
             "rnet50": 7.0, "vit": 2.0, "clip": 6.0},
    "pets": {"qwen2-vl": 18.0, "phi-3.5-vi": 16.0, "rnet50-sbert": 11.5,
             "rnet50": 6.5, "vit": 5.5, "clip": 2.5},
    "clothing": {"qwen2-vl": 18.0, "phi-3.5-vi": 15.0, "rnet50-sbert": 10.5,
                 "rnet50": 3.0, "vit": 8.5, "clip": 5.0},
}
EXPECTED_OVERALL = {"qwen2-vl": 50.0, "phi-3.5-vi": 46.0, "rnet50-sbert": 38.0,
                    "rnet50": 16.5, "vit": 16.0, "clip": 13.5}


def reference_table():
    table = {}
    for (model, dataset), values in REFERENCE_RECALL.items():
        for extractor, value in zip(EXTRACTORS, values):
            table[(model, dataset, extractor)] = value
    return table


class TestGridEnumeration:
    def test_default_learned_grid_has_30_points(self):
        assert len(xp.enumerate_grid(xp.DEFAULT_LEARNED_AXES)) == 30

    def test_empty_axes_single_point(self):
        assert xp.enumerate_grid({}) == [{}]

    def test_deterministic_order(self):
        axes = {"a": [1, 2], "b": ["x", "y"]}
        assert xp.enumerate_grid(axes) == [
            {"a": 1, "b": "x"}, {"a": 1, "b": "y"}, {"a": 2, "b": "x"}, {"a": 2, "b": "y"}
        ]


class TestSelectBest:
    def _trace(self):
        trace = []
        for idx in range(10):
            recall = 0.30 if idx == 7 else 0.10 + 0.01 * idx
            trace.append({
                "config": {"point": idx},
                "status": "ok",
                "valid_metrics": {"recall": recall, "ndcg": 0.5, "hr": 0.9},
            })
        return trace

    def test_injected_maximum_wins(self):
        assert xp.select_best(self._trace())["config"] == {"point": 7}

    def test_idempotent_on_stored_trace(self):
        trace = self._trace()
        round_tripped = json.loads(json.dumps(trace))
        assert xp.select_best(trace) == xp.select_best(round_tripped)

    def test_tiebreak_ndcg_then_lexicographic(self):
        trace = [
            {"config": {"p": "b"}, "status": "ok",
             "valid_metrics": {"recall": 0.3, "ndcg": 0.2, "hr": 1}},
            {"config": {"p": "a"}, "status": "ok",
             "valid_metrics": {"recall": 0.3, "ndcg": 0.2, "hr": 1}},
            {"config": {"p": "c"}, "status": "ok",
             "valid_metrics": {"recall": 0.3, "ndcg": 0.4, "hr": 1}},
        ]
        assert xp.select_best(trace)["config"] == {"p": "c"}
        assert xp.select_best(trace[:2])["config"] == {"p": "a"}

    def test_failed_points_are_skipped(self):
        trace = [
            {"config": {"p": 0}, "status": "failed", "error": "diverged"},
            {"config": {"p": 1}, "status": "ok",
             "valid_metrics": {"recall": 0.1, "ndcg": 0.1, "hr": 0.1}},
        ]
        assert xp.select_best(trace)["config"] == {"p": 1}
        with pytest.raises(ValueError):
            xp.select_best(trace[:1])


class TestRunGrid:
    def test_single_point_grid_selects_it(self, small_ds):
        result = xp.run_grid("mostpop", small_ds, axes={})
        assert result.best_config == {}
        assert result.test_report.n_evaluated_users > 0

    def test_knn_grid_runs_and_traces(self, small_ds):
        axes = {"similarity": ["cosine", "jaccard"], "neighbors": [3, 5]}
        result = xp.run_grid("itemknn", small_ds, axes=axes)
        assert len(result.trace) == 4
        assert all(t["status"] == "ok" for t in result.trace)
        assert result.best_config in [t["config"] for t in result.trace]

    def test_provenance_fields_present(self, small_ds):
        result = xp.run_grid("mostpop", small_ds, axes={})
        payload = result.as_dict()
        assert set(payload["provenance"]) == {"config_hash", "seeds", "version"}
        assert payload["simplified_reimplementation"] is False

    def test_parallel_matches_sequential(self, small_ds):
        axes = {"similarity": ["cosine", "jaccard"], "neighbors": [3, 5]}
        seq = xp.run_grid("itemknn", small_ds, axes=axes, n_jobs=1)
        par = xp.run_grid("itemknn", small_ds, axes=axes, n_jobs=2)
        assert seq.best_config == par.best_config
        assert seq.trace == par.trace
        assert seq.test_report.percentages() == par.test_report.percentages()

    def test_diverged_point_recorded_and_skipped(self, small_ds):
        axes = {"learning_rate": [0.05, 1e13]}
        with np.errstate(over="ignore", invalid="ignore"):
            result = xp.run_grid(
                "bprmf", small_ds, axes=axes,
                base_params={"latent_dim": 4, "epochs": 40, "batch_size": 64,
                             "l2_reg": 0.01, "early_stop_patience": 0},
            )
        statuses = {t["config"]["learning_rate"]: t["status"] for t in result.trace}
        assert statuses[1e13] == "failed"
        assert statuses[0.05] == "ok"
        assert result.best_config["learning_rate"] == 0.05


class TestBorda:
    def test_reproduces_reference_tables_exactly(self):
        table = xp.borda_count(reference_table(), extractors=EXTRACTORS,
                               models=MODELS, datasets=DATASETS)
        for dataset in DATASETS:
            assert table.per_dataset[dataset] == EXPECTED_BORDA[dataset]
            assert table.dataset_sum(dataset) == 60.0
        assert table.overall == EXPECTED_OVERALL
        assert [e for e, r in sorted(table.overall_rank.items(), key=lambda kv: kv[1])] == [
            "qwen2-vl", "phi-3.5-vi", "rnet50-sbert", "rnet50", "vit", "clip"
        ]

    def test_conservation_on_random_tables(self):
        rng = np.random.default_rng(0)
        table = {
            (m, d, e): float(rng.random())
            for m in MODELS for d in DATASETS for e in EXTRACTORS
        }
        result = xp.borda_count(table)
        for dataset in DATASETS:
            assert result.dataset_sum(dataset) == pytest.approx(60.0)

    def test_invariant_under_monotone_transform(self):
        base = reference_table()
        warped = {k: float(np.exp(0.5 * v) + 3.0) for k, v in base.items()}
        a = xp.borda_count(base, extractors=EXTRACTORS)
        b = xp.borda_count(warped, extractors=EXTRACTORS)
        assert a.per_dataset == b.per_dataset
        assert a.overall == b.overall

    def test_missing_cell_is_named(self):
        table = reference_table()
        del table[("bm3", "pets", "clip")]
        with pytest.raises(xp.MissingCellError, match="bm3.*pets.*clip"):
            xp.borda_count(table, extractors=EXTRACTORS)

    def test_single_extractor_degenerates_to_max_points(self):
        table = {(m, d, "only"): 1.0 for m in MODELS for d in DATASETS}
        result = xp.borda_count(table)
        assert all(v == 0.0 for v in result.overall.values())
        assert result.overall_rank["only"] == 1

    def test_tsv_round_trip(self, tmp_path):
        path = tmp_path / "recall.tsv"
        with path.open("w") as fh:
            fh.write("model\tdataset\textractor\trecall\n")
            for (m, d, e), v in reference_table().items():
                fh.write(f"{m}\t{d}\t{e}\t{v}\n")
        table = xp.load_recall_table_tsv(path)
        result = xp.borda_count(table, extractors=EXTRACTORS)
        assert result.overall == EXPECTED_OVERALL
        out = tmp_path / "borda.tsv"
        result.to_tsv(out)
        assert out.read_text().startswith("rank\textractor\t")


class TestBenchmarkReporting:
    def test_reporting_path_reproduces_reference_borda(self):
        cells = {
            key: {"metrics_pct": {"recall": value, "ndcg": 0.0, "hr": 0.0}}
            for key, value in reference_table().items()
        }
        report = xp.assemble_benchmark_report(cells)
        assert report["borda"]["overall"] == EXPECTED_OVERALL
        for dataset in DATASETS:
            assert report["borda"]["per_dataset"][dataset] == EXPECTED_BORDA[dataset]

    def test_markers_and_star_on_fixture(self):
        rng = np.random.default_rng(1)
        base = rng.random(50)
        cells = {
            ("m", "d", "good"): {
                "metrics_pct": {"recall": 12.0, "ndcg": 6.0, "hr": 15.0},
                "per_user": {"recall": base + 0.2 + 0.05 * rng.random(50),
                             "ndcg": base, "hr": base},
            },
            ("m", "d", "weak"): {
                "metrics_pct": {"recall": 9.0, "ndcg": 5.0, "hr": 12.0},
                "per_user": {"recall": base, "ndcg": base, "hr": base},
            },
        }
        report = xp.assemble_benchmark_report(cells)
        marker = report["markers"]["m/d/recall"]
        assert marker["best"] == "good"
        assert marker["second"] == "weak"
        assert marker["significant"] is True
        assert report["markers"]["m/d/ndcg"]["significant"] is False

    def test_single_extractor_has_no_second(self):
        cells = {("m", "d", "only"): {"metrics_pct": {"recall": 1.0, "ndcg": 1.0, "hr": 1.0}}}
        report = xp.assemble_benchmark_report(cells)
        assert report["markers"]["m/d/recall"]["second"] is None


class TestNoiseAblation:
    def test_identical_conditions_have_zero_deltas(self, small_ds):
        reference = gen_gaussian_noise(small_ds.n_items, 4, seed=0,
                                       item_ids=list(small_ds.item_ids))
        conditions = {name: reference for name in ("gaussian", "multivariate", "semantic")}
        report = xp.run_noise_ablation(
            "vbpr", small_ds, reference, seeds=[0, 1], axes={},
            base_params={"latent_dim": 4, "epochs": 2, "batch_size": 64,
                         "early_stop_patience": 0},
            conditions=conditions,
        )
        means = {c: report["conditions"][c]["mean_recall_pct"] for c in report["conditions"]}
        assert means["gaussian"] == means["semantic"] == means["multivariate"]
        assert report["significance"]["semantic_vs_gaussian"]["p_value"] == 1.0
        assert report["significance"]["semantic_vs_gaussian"]["degenerate"] is True

    def test_report_schema_round_trips(self, small_ds, tmp_path):
        reference = gen_gaussian_noise(small_ds.n_items, 4, seed=0,
                                       item_ids=list(small_ds.item_ids))
        report = xp.run_noise_ablation(
            "vbpr", small_ds, reference, seeds=[0], axes={},
            base_params={"latent_dim": 4, "epochs": 1, "batch_size": 64,
                         "early_stop_patience": 0},
        )
        path = tmp_path / "ablation.json"
        path.write_text(json.dumps(report))
        assert json.loads(path.read_text()) == json.loads(json.dumps(report))
        assert report["noise_shrinkage"] == 0.1
        assert {"gaussian", "multivariate", "semantic"} == set(report["conditions"])

    def test_misaligned_reference_rejected(self, small_ds):
        bad = gen_gaussian_noise(small_ds.n_items, 4, seed=0)
        with pytest.raises(ValueError, match="aligned"):
            xp.run_noise_ablation("vbpr", small_ds, bad, seeds=[0])


class TestAttributeStudy:
    def _answers(self, ds, informative=True):
        schema = BUILTIN_SCHEMAS["pets"]
        rows = []
        for idx, item_id in enumerate(ds.item_ids):
            value = f"kw{idx % 3}" if informative else "same"
            rows.append((item_id, f"[Category] {{{value}}}, [Pet Type] {{{value}}}, "
                                  f"[Purpose] {{{value}}}, [Material] {{{value}}}, "
                                  f"[Usage Context] {{{value}}}"))
        return rows

    def test_runs_baselines_and_attribute_model(self, small_ds):
        report = xp.run_attribute_study(
            small_ds,
            {"gen-a": self._answers(small_ds)},
            BUILTIN_SCHEMAS["pets"],
            baseline_models=("random", "mostpop"),
            knn_axes={"neighbors": [3]},
        )
        models = [row["model"] for row in report["rows"]]
        assert models == ["attr-itemknn", "random", "mostpop"]
        assert report["rows"][0]["uninformative_attributes"] is False
        assert report["attribute_pipelines"]["gen-a"]["parse_failed"] == 0

    def test_identical_attributes_flagged(self, small_ds):
        report = xp.run_attribute_study(
            small_ds,
            {"gen-b": self._answers(small_ds, informative=False)},
            BUILTIN_SCHEMAS["pets"],
            baseline_models=(),
            knn_axes={"neighbors": [3]},
        )
        assert report["rows"][0]["uninformative_attributes"] is True

    def test_random_recall_matches_closed_form(self):
        # Uniform random scores: each of the user's T targets lands in the
        # top-K of C candidates with probability K/C.
        ds = random_dataset(n_users=300, n_items=40, per_user=12, seed=13)
        report = xp.run_grid("random", ds, axes={}, base_params={"seed": 3}, k=10)
        per_user_expected = []
        targets = ds.items_by_user("test")
        masked_t = ds.items_by_user("train")
        masked_v = ds.items_by_user("valid")
        for u in report.test_report.user_indices:
            candidates = ds.n_items - len(masked_t[u]) - len(masked_v[u])
            per_user_expected.append(min(1.0, 10.0 / candidates))
        expected = float(np.mean(per_user_expected))
        got = report.test_report.mean("recall")
        assert got == pytest.approx(expected, abs=3 * np.sqrt(expected / 300))


class TestAttributeVsPlainKnnOnPlantedData:
    @pytest.mark.slow
    def test_cluster_attributes_beat_interaction_knn(self):
        wins = 0
        for seed in range(5):
            ds, _, item_cluster, _ = make_planted(
                n_users=80, n_items=40, n_clusters=4, per_user=8,
                in_cluster_prob=0.85, seed=seed,
            )
            schema = BUILTIN_SCHEMAS["pets"]
            answers = []
            for item_id in ds.item_ids:
                c = item_cluster[int(item_id[1:])]
                answers.append(
                    (item_id,
                     f"[Category] {{c{c}}}, [Pet Type] {{t{c}}}, [Purpose] {{p{c}}}, "
                     f"[Material] {{m{c}}}, [Usage Context] {{u{c}}}")
                )
            attr_report = xp.run_attribute_study(
                ds, {"oracle": answers}, schema, baseline_models=("itemknn",),
                knn_axes={"similarity": ["jaccard"], "neighbors": [10]},
            )
            by_model = {row["model"]: row["metrics_pct"]["recall"]
                        for row in attr_report["rows"]}
            wins += by_model["attr-itemknn"] >= by_model["itemknn"]
        assert wins >= 4
