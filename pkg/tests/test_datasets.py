"""Loading, k-core filtering, splitting, and statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modrec.datasets import (
    InteractionDataset,
    InteractionLoadError,
    RawInteraction,
    compute_stats,
    kcore_filter,
    load_interactions,
    sparsity_percent,
    split_holdout,
)


def _write(tmp_path, text, name="inter.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadInteractions:
    def test_three_line_tsv(self, tmp_path):
        path = _write(tmp_path, "u1\ti1\nu1\ti2\nu2\ti1\n")
        result = load_interactions(path)
        assert [(r.user_id, r.item_id) for r in result.interactions] == [
            ("u1", "i1"),
            ("u1", "i2"),
            ("u2", "i1"),
        ]
        assert result.malformed_count == 0

    def test_header_row_detected(self, tmp_path):
        path = _write(tmp_path, "user_id\titem_id\trating\nu1\ti1\t5\n")
        result = load_interactions(path)
        assert len(result.interactions) == 1
        assert result.interactions[0].rating == 5.0

    def test_csv_format(self, tmp_path):
        path = _write(tmp_path, "u1,i1\nu2,i2\n", name="inter.csv")
        assert len(load_interactions(path, fmt="csv").interactions) == 2

    def test_empty_item_strict_names_line(self, tmp_path):
        path = _write(tmp_path, "u1\ti1\nu1\t\t5\n")
        with pytest.raises(InteractionLoadError, match=":2"):
            load_interactions(path, strict=True)

    def test_lenient_counts_malformed(self, tmp_path):
        rows = [f"u{i}\ti{i}" for i in range(10)] + ["\ti9", "u3\t\tbad"]
        result = load_interactions(_write(tmp_path, "\n".join(rows) + "\n"))
        assert len(result.interactions) == 10
        assert result.malformed_count == 2
        assert [line for line, _ in result.malformed_lines] == [11, 12]

    def test_missing_file(self, tmp_path):
        with pytest.raises(InteractionLoadError):
            load_interactions(tmp_path / "nope.tsv")

    def test_bad_rating_is_malformed(self, tmp_path):
        result = load_interactions(_write(tmp_path, "u1\ti1\tnot-a-number\n"))
        assert result.malformed_count == 1

    def test_strict_mode_rejects_extra_columns(self, tmp_path):
        path = _write(tmp_path, "u1\ti1\t5\t123\textra\n")
        with pytest.raises(InteractionLoadError, match="columns"):
            load_interactions(path, strict=True)
        assert load_interactions(path).malformed_count == 0  # lenient tolerates


def _pairs(interactions):
    return [(r.user_id, r.item_id) for r in interactions]


def _kcore_oracle(interactions, k_user, k_item, order_seed):
    """Remove ONE violating row at a time, in shuffled order, to a fixpoint."""
    rng = np.random.default_rng(order_seed)
    current = list(interactions)
    while True:
        users = {}
        items = {}
        for r in current:
            users[r.user_id] = users.get(r.user_id, 0) + 1
            items[r.item_id] = items.get(r.item_id, 0) + 1
        bad_users = {u for u, d in users.items() if d < k_user}
        bad_items = {i for i, d in items.items() if d < k_item}
        if not bad_users and not bad_items:
            return current
        victims = [
            idx
            for idx, r in enumerate(current)
            if r.user_id in bad_users or r.item_id in bad_items
        ]
        current.pop(victims[rng.integers(len(victims))])


class TestKcoreFilter:
    def test_k1_is_identity_on_deduplicated(self):
        raw = [RawInteraction("u1", "i1"), RawInteraction("u2", "i2")]
        assert kcore_filter(raw, 1, 1) == raw

    def test_chain_cascades_to_empty(self):
        raw = [
            RawInteraction("u1", "i1"),
            RawInteraction("u2", "i1"),
            RawInteraction("u2", "i2"),
            RawInteraction("u3", "i2"),
        ]
        assert kcore_filter(raw, 2, 2) == []

    def test_keeps_a_dense_block(self):
        block = [RawInteraction(f"u{u}", f"i{i}") for u in range(3) for i in range(3)]
        extra = [RawInteraction("u9", "i0")]
        assert _pairs(kcore_filter(block + extra, 3, 3)) == _pairs(block)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            kcore_filter([], 0, 1)

    def test_empty_result_logs_warning(self, caplog):
        raw = [RawInteraction("u1", "i1")]
        with caplog.at_level("WARNING", logger="modrec.datasets"):
            assert kcore_filter(raw, 5, 5) == []
        assert any("removed all" in rec.message for rec in caplog.records)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 7), st.integers(0, 7)),
            min_size=0,
            max_size=40,
        ),
        st.integers(1, 3),
        st.integers(1, 3),
        st.integers(0, 5),
    )
    def test_matches_one_at_a_time_oracle(self, pairs, k_user, k_item, order_seed):
        # Deduplicate so degrees equal unique-pair degrees for both paths.
        raw = [RawInteraction(f"u{u}", f"i{i}") for u, i in dict.fromkeys(pairs)]
        ours = kcore_filter(raw, k_user, k_item)
        oracle = _kcore_oracle(raw, k_user, k_item, order_seed)
        assert sorted(_pairs(ours)) == sorted(_pairs(oracle))
        # Idempotence and maximality.
        assert kcore_filter(ours, k_user, k_item) == ours
        if ours:
            users = {}
            items = {}
            for r in ours:
                users[r.user_id] = users.get(r.user_id, 0) + 1
                items[r.item_id] = items.get(r.item_id, 0) + 1
            assert min(users.values()) >= k_user
            assert min(items.values()) >= k_item


class TestFromRaw:
    def test_dedup_keeps_earliest_timestamp(self):
        raw = [
            RawInteraction("u1", "i1", rating=1.0, timestamp=100),
            RawInteraction("u1", "i1", rating=2.0, timestamp=50),
            RawInteraction("u1", "i2"),
        ]
        ds = InteractionDataset.from_raw(raw)
        assert ds.n_interactions == 2
        assert ds.timestamps[0] == 50
        assert ds.ratings[0] == 2.0

    def test_indices_dense_and_first_appearance_ordered(self):
        raw = [
            RawInteraction("b", "y"),
            RawInteraction("a", "x"),
            RawInteraction("b", "x"),
        ]
        ds = InteractionDataset.from_raw(raw)
        assert ds.user_ids == ["b", "a"]
        assert ds.item_ids == ["y", "x"]
        assert set(ds.users.tolist()) == {0, 1}
        assert set(ds.items.tolist()) == {0, 1}


class TestSplitHoldout:
    def _user_ds(self, n):
        raw = [RawInteraction("u0", f"i{k}") for k in range(n)]
        return InteractionDataset.from_raw(raw)

    def test_ten_interactions_split_8_1_1(self):
        ds = split_holdout(self._user_ds(10), seed=3)
        counts = np.bincount(ds.split, minlength=3)
        assert counts.tolist() == [8, 1, 1]

    def test_single_interaction_goes_to_train(self):
        ds = split_holdout(self._user_ds(1), seed=3)
        assert ds.split.tolist() == [0]

    def test_partition_and_train_guarantee(self, small_ds):
        counts = np.bincount(small_ds.split, minlength=3)
        assert counts.sum() == small_ds.n_interactions
        train_users = set(small_ds.interactions_of("train")[0].tolist())
        assert train_users == set(range(small_ds.n_users))

    def test_seed_determinism_and_sensitivity(self):
        raw = [
            RawInteraction(f"u{u}", f"i{(u + k) % 40}")
            for u in range(100)
            for k in range(10)
        ]
        ds = InteractionDataset.from_raw(raw)
        a = split_holdout(ds, seed=11).split
        b = split_holdout(ds, seed=11).split
        c = split_holdout(ds, seed=12).split
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split_holdout(self._user_ds(5), ratios=(0.5, 0.5, 0.1))
        with pytest.raises(ValueError):
            split_holdout(self._user_ds(5), ratios=(1.0, 0.0, 0.0))

    def test_tsv_round_trip(self, tmp_path, small_ds):
        path = tmp_path / "split.tsv"
        small_ds.to_tsv(path)
        back = InteractionDataset.from_tsv(path)
        assert back.user_ids == small_ds.user_ids
        assert back.item_ids == small_ds.item_ids
        assert np.array_equal(back.split, small_ds.split)
        assert np.array_equal(back.users, small_ds.users)


class TestStats:
    def test_published_reference_rows(self):
        assert sparsity_percent(108897, 17836, 330771) == 99.983
        assert sparsity_percent(461828, 61060, 1772584) == 99.993
        assert sparsity_percent(398796, 75616, 2109975) == 99.993

    def test_single_cell_dense(self):
        assert sparsity_percent(1, 1, 1) == 0.0

    def test_consistency_with_dataset(self, small_ds):
        stats = compute_stats(small_ds)
        assert stats.n_users == small_ds.n_users
        assert stats.n_items == small_ds.n_items
        assert stats.n_interactions == small_ds.n_interactions
        direct = 100.0 * (
            1.0 - small_ds.n_interactions / (small_ds.n_users * small_ds.n_items)
        )
        assert abs(stats.sparsity_pct - direct) < 1e-3

    def test_counts_required(self):
        with pytest.raises(ValueError):
            compute_stats(n_users=3, n_items=4)


def test_kcore_profile_defaults():
    from modrec.datasets import KCORE_PROFILES

    assert KCORE_PROFILES == {"baby": 5, "pets": 5, "clothing": 10}
