"""Acceptance suite: one test per release criterion, with pass/fail lines.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines; each criterion also enforces its runtime budget.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from helpers import make_planted
from modrec import experiments as xp
from modrec.datasets import sparsity_percent
from modrec.evaluation import topk_indices, user_metrics
from modrec.factor import batch_loss_and_grads
from modrec.features import fit_moments, gen_gaussian_noise, gen_multivariate_noise
from modrec.graph import lightgcn_propagate
from modrec.keywords import BUILTIN_SCHEMAS, build_attribute_matrix, build_vocabulary, parse_structured_answer
from modrec.neighbors import similarity
from test_evaluation import oracle_metrics
from test_experiments import EXPECTED_BORDA, EXPECTED_OVERALL, EXTRACTORS, reference_table
from test_factor import finite_difference, random_instance
from test_graph import dense_propagation_oracle, random_graph
from test_keywords import TEMPLATE_EXAMPLES


@contextmanager
def criterion(name, budget_s):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"\n[FAIL] {name}")
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < budget_s, f"{name}: {elapsed:.2f}s exceeded {budget_s}s budget"
    print(f"\n[PASS] {name} ({elapsed:.2f}s)")


def test_borda_reproduction_exact():
    with criterion("Borda reproduction (exact)", budget_s=1.0):
        table = xp.borda_count(reference_table(), extractors=EXTRACTORS)
        for dataset, expected in EXPECTED_BORDA.items():
            assert table.per_dataset[dataset] == expected
            assert table.dataset_sum(dataset) == 60.0
        assert table.overall == EXPECTED_OVERALL


def test_sparsity_reproduction():
    with criterion("Sparsity reproduction", budget_s=1.0):
        assert sparsity_percent(108897, 17836, 330771) == 99.983
        assert sparsity_percent(461828, 61060, 1772584) == 99.993
        assert sparsity_percent(398796, 75616, 2109975) == 99.993


def test_metric_oracle_equivalence():
    with criterion("Metric oracle equivalence (1,000 random instances)", budget_s=10.0):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n_items = int(rng.integers(2, 21))
            k = int(rng.integers(1, 21))
            scores = rng.random(n_items)
            items = rng.permutation(n_items)
            n_targets = int(rng.integers(1, n_items + 1))
            targets = set(items[:n_targets].tolist())
            n_masked = int(rng.integers(0, n_items - n_targets + 1))
            masked = set(items[n_targets : n_targets + n_masked].tolist())
            ranked = topk_indices(scores, k, exclude=np.array(sorted(masked), dtype=np.int64))
            got = user_metrics(ranked, targets, k)
            want = oracle_metrics(scores, targets, masked, k)
            assert got == want  # bit-exact


def test_gradient_checks():
    with criterion("Gradient checks (BPR-MF and VBPR vs finite differences)", budget_s=30.0):
        for with_content in (False, True):
            rng = np.random.default_rng(7)
            worst = 0.0
            for _ in range(100):
                params, features, users, pos, neg = random_instance(rng, with_content)
                l2 = float(rng.choice([0.0, 0.01, 0.1]))
                _, grads = batch_loss_and_grads(params, users, pos, neg, l2, features)

                def loss_fn():
                    return batch_loss_and_grads(params, users, pos, neg, l2, features)[0]

                for key in params:
                    fd = finite_difference(loss_fn, params, key)
                    rel = np.linalg.norm(fd - grads[key]) / max(
                        np.linalg.norm(grads[key]), 1e-8
                    )
                    worst = max(worst, rel)
            assert worst < 1e-4, f"worst relative error {worst:.2e}"


def test_propagation_oracle():
    with criterion("Propagation oracle (sparse vs dense, 0-4 layers)", budget_s=10.0):
        rng = np.random.default_rng(11)
        for layers in range(5):
            for _ in range(8):
                n_u = int(rng.integers(2, 26))
                n_i = int(rng.integers(2, 25))
                graph = random_graph(rng, n_u, n_i)
                u = rng.standard_normal((n_u, 5))
                i = rng.standard_normal((n_i, 5))
                got_u, got_i = lightgcn_propagate(graph, u, i, layers)
                want_u, want_i = dense_propagation_oracle(graph, u, i, layers)
                assert np.max(np.abs(got_u - want_u)) < 1e-6
                assert np.max(np.abs(got_i - want_i)) < 1e-6


def test_noise_moment_fidelity():
    with criterion("Noise-moment fidelity (50,000 samples, 8-32 dims)", budget_s=30.0):
        rng = np.random.default_rng(5)
        for dim in (8, 16, 32):
            base = gen_gaussian_noise(400, dim, seed=dim)
            # Unit-scale mixing keeps coordinate variances near 1, matching
            # the scale of real embedding dumps the tolerance presumes.
            mixed = base.matrix.astype(np.float64) @ (
                rng.standard_normal((dim, dim)) / math.sqrt(dim)
            )
            from modrec.features import FeatureTable, Provenance

            source = FeatureTable(
                base.item_ids, mixed.astype(np.float32), Provenance("mixed", "noise")
            )
            moments = fit_moments(source, shrinkage=0.0)
            sample = gen_multivariate_noise(moments, 50_000, seed=dim + 1)
            x = sample.matrix.astype(np.float64)
            mean_err = np.abs(x.mean(axis=0) - moments.mean)
            assert np.all(mean_err < 0.02 * max(1.0, np.abs(moments.mean).max()))
            centered = x - x.mean(axis=0)
            cov = centered.T @ centered / (x.shape[0] - 1)
            frob = np.linalg.norm(cov - moments.covariance) / np.linalg.norm(
                moments.covariance
            )
            assert frob < 0.05, f"dim {dim}: Frobenius error {frob:.3f}"


@pytest.mark.slow
def test_desk_scale_content_ablation():
    name = "Desk-scale content ablation (planted clusters, 6 seeds)"
    with criterion(name, budget_s=900.0):
        ds, informative, _, _ = make_planted(
            n_users=500, n_items=200, n_clusters=4, per_user=12, seed=0
        )
        seeds = [0, 1, 2, 3, 4, 5]
        conditions = {
            "gaussian": lambda seed: gen_gaussian_noise(
                ds.n_items, informative.dim, seed=seed, item_ids=list(ds.item_ids)
            ),
            "semantic": informative,
        }
        settings = {
            "vbpr": {"latent_dim": 16, "learning_rate": 0.1, "l2_reg": 0.001,
                     "epochs": 60, "batch_size": 1024, "early_stop_patience": 0},
            "lattice": {"latent_dim": 16, "learning_rate": 0.1, "l2_reg": 0.001,
                        "epochs": 30, "batch_size": 1024, "early_stop_patience": 0},
            "freedom": {"latent_dim": 16, "learning_rate": 0.1, "l2_reg": 0.001,
                        "epochs": 30, "batch_size": 1024, "early_stop_patience": 0},
            "bm3": {"latent_dim": 16, "learning_rate": 0.1, "l2_reg": 0.001,
                    "epochs": 30, "batch_size": 1024, "early_stop_patience": 0,
                    "dropout": 0.3},
        }
        gaps = {}
        for model, params in settings.items():
            report = xp.run_noise_ablation(
                model, ds, informative, seeds=seeds, axes={},
                base_params=params, conditions=dict(conditions),
            )
            semantic = report["conditions"]["semantic"]["mean_recall_pct"]
            gaussian = report["conditions"]["gaussian"]["mean_recall_pct"]
            gaps[model] = semantic - gaussian
            if model != "bm3":
                sig = report["significance"]["semantic_vs_gaussian"]
                assert semantic > gaussian, f"{model}: semantic {semantic} <= {gaussian}"
                assert sig["p_value"] < 0.05, f"{model}: p={sig['p_value']:.4f}"
            print(f"  {model}: semantic={semantic:.3f} gaussian={gaussian:.3f} "
                  f"gap={gaps[model]:+.3f}")
        ratio = gaps["bm3"] / gaps["vbpr"]
        assert ratio < 1.0, f"BM3/VBPR gap ratio {ratio:.3f} not < 1"


def test_keyword_pipeline_shape():
    with criterion("Keyword pipeline shape (255 features, rows sum to 5)", budget_s=1.0):
        schema = BUILTIN_SCHEMAS["baby"]
        from modrec.keywords import AttributeRecord

        records = []
        for slot_idx, slot in enumerate(schema.slots):
            for kw in range(60):
                for rep in range(60 - kw):
                    records.append(
                        AttributeRecord(f"r{slot_idx}-{kw}-{rep}", {slot: f"kw{kw:02d}"})
                    )
        vocab = build_vocabulary(records, schema, top_k=50)
        matrix, _ = build_attribute_matrix(records, vocab)
        assert matrix.n_features == 255
        assert np.all(matrix.matrix.sum(axis=1) == 5)
        for domain, text in TEMPLATE_EXAMPLES.items():
            record = parse_structured_answer(text, BUILTIN_SCHEMAS[domain])
            assert not record.parse_failed
            assert set(record.values) == set(BUILTIN_SCHEMAS[domain].slots)


def test_grid_cardinality_and_selection():
    with criterion("Grid cardinality (30 points) and idempotent selection", budget_s=1.0):
        import json

        assert len(xp.enumerate_grid(xp.DEFAULT_LEARNED_AXES)) == 30
        rng = np.random.default_rng(3)
        trace = [
            {
                "config": {"lr": float(lr), "reg": float(reg), "dim": int(dim)},
                "status": "ok",
                "valid_metrics": {
                    "recall": float(rng.random()),
                    "ndcg": float(rng.random()),
                    "hr": float(rng.random()),
                },
            }
            for lr in xp.DEFAULT_LEARNED_AXES["learning_rate"]
            for reg in xp.DEFAULT_LEARNED_AXES["l2_reg"]
            for dim in xp.DEFAULT_LEARNED_AXES["latent_dim"]
        ]
        first = xp.select_best(trace)
        stored = json.loads(json.dumps(trace))
        assert xp.select_best(stored) == first
        assert xp.select_best(json.loads(json.dumps(stored))) == first


def test_knn_similarity_identities():
    with criterion("kNN identities (tversky=jaccard, asym=cosine)", budget_s=5.0):
        rng = np.random.default_rng(17)
        worst_tversky = worst_asym = 0.0
        for _ in range(10_000):
            size = int(rng.integers(2, 16))
            a = (rng.random(size) < 0.45).astype(float)
            b = (rng.random(size) < 0.45).astype(float)
            worst_tversky = max(
                worst_tversky,
                abs(
                    similarity(a, b, "tversky", alpha=1.0, beta=1.0)
                    - similarity(a, b, "jaccard")
                ),
            )
            worst_asym = max(
                worst_asym,
                abs(similarity(a, b, "asym", alpha=0.5) - similarity(a, b, "cosine")),
            )
        assert worst_tversky < 1e-12
        assert worst_asym < 1e-12
