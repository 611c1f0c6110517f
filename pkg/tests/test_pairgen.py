from __future__ import annotations

import pytest

from softtune.corpus import DatasetSplit, GroupSplit, TextCollection, TextItem
from softtune.pairgen import (
    EmptyGroupError,
    NegativeSamplingError,
    PairOrigin,
    build_negative_pairs,
    build_pair_dataset,
    build_positive_pairs,
    read_pairs,
    write_pairs,
)


def _world(train_per_group: dict[int, int], heldout: int = 0):
    items = []
    groups = []
    for gid, t in train_per_group.items():
        qids = [f"g{gid}-q{i}" for i in range(t + heldout)]
        for i, qid in enumerate(qids):
            items.append(TextItem(qid, f"question {gid}.{i}", gid))
        items.append(TextItem(f"g{gid}-p", f"passage {gid}", gid))
        groups.append(GroupSplit(gid, tuple(qids[:t]), tuple(qids[t:]), f"g{gid}-p"))
    return TextCollection(tuple(items)), DatasetSplit(tuple(groups))


class TestPositives:
    def test_one_group_t2_enumeration(self):
        collection, split = _world({0: 2})
        positives, augmented = build_positive_pairs(collection, split)
        direct = [r for r in positives if r.origin is PairOrigin.DIRECT]
        concats = [r for r in positives if r.origin is not PairOrigin.DIRECT]
        assert len(direct) == 4
        assert len(concats) == 8
        assert len(positives) == 12
        # the 2x2 ordered grid, diagonal included
        assert {(r.query_id, r.passage_id) for r in direct} == {
            ("g0-q0", "g0-q0"), ("g0-q0", "g0-q1"), ("g0-q1", "g0-q0"), ("g0-q1", "g0-q1"),
        }
        # each ordered pair contributes (concat, left) and (concat, right)
        assert ("g0-q0+g0-q1", "g0-q0") in {(r.query_id, r.passage_id) for r in concats}
        assert ("g0-q0+g0-q1", "g0-q1") in {(r.query_id, r.passage_id) for r in concats}
        # concat texts joined with ". " and appended to the collection
        texts = augmented.texts()
        assert texts["g0-q0+g0-q1"] == "question 0.0. question 0.1"
        assert len(augmented) == len(collection) + 4

    def test_one_group_t1_smallest_instance(self):
        collection, split = _world({0: 1})
        positives, _ = build_positive_pairs(collection, split)
        assert len(positives) == 3  # 3 * T^2 with T=1
        origins = sorted(r.origin.value for r in positives)
        assert origins == ["concat_left", "concat_right", "direct"]
        assert all(r.hard_label == 1 for r in positives)

    def test_count_scales_as_three_t_squared(self):
        for t in (1, 2, 3, 5):
            collection, split = _world({0: t, 1: t})
            positives, _ = build_positive_pairs(collection, split)
            assert len(positives) == 2 * 3 * t * t

    def test_positives_stay_within_their_group(self):
        collection, split = _world({0: 3, 1: 2})
        positives, augmented = build_positive_pairs(collection, split)
        group_of = augmented.group_of()
        for record in positives:
            assert group_of[record.query_id] == group_of[record.passage_id]

    def test_empty_group_rejected(self):
        collection, split = _world({0: 2})
        bad_split = DatasetSplit(split.groups + (GroupSplit(9, (), (), "g0-p"),))
        with pytest.raises(EmptyGroupError, match="empty group"):
            build_positive_pairs(collection, bad_split)


class TestNegatives:
    def test_balance_and_cross_group(self):
        collection, split = _world({0: 2, 1: 3})
        positives, augmented = build_positive_pairs(collection, split)
        negatives = build_negative_pairs(augmented, split, positives, seed=5)
        assert len(negatives) == len(positives)
        group_of = augmented.group_of()
        train_ids = {tid for g in split.groups for tid in g.train_ids}
        for record in negatives:
            assert record.hard_label == 0
            assert record.origin is PairOrigin.NEGATIVE
            assert record.passage_id in train_ids
            assert group_of[record.query_id] != group_of[record.passage_id]

    def test_negative_queries_match_positive_multiset(self):
        collection, split = _world({0: 2, 1: 2})
        positives, augmented = build_positive_pairs(collection, split)
        negatives = build_negative_pairs(augmented, split, positives, seed=1)
        assert sorted(r.query_id for r in negatives) == sorted(r.query_id for r in positives)

    def test_determinism(self):
        collection, split = _world({0: 3, 1: 2, 2: 4})
        positives, augmented = build_positive_pairs(collection, split)
        first = build_negative_pairs(augmented, split, positives, seed=99)
        second = build_negative_pairs(augmented, split, positives, seed=99)
        assert first == second
        different = build_negative_pairs(augmented, split, positives, seed=100)
        assert different != first

    def test_single_group_rejected(self):
        collection, split = _world({0: 2})
        positives, augmented = build_positive_pairs(collection, split)
        with pytest.raises(NegativeSamplingError, match="cannot sample negatives"):
            build_negative_pairs(augmented, split, positives, seed=0)


class TestDataset:
    def test_count_law_uneven_groups(self):
        # |dataset| == 6 * sum of T_g^2
        sizes = {0: 2, 1: 5, 2: 1}
        collection, split = _world(sizes)
        dataset, _ = build_pair_dataset(collection, split, seed=3)
        assert len(dataset.records) == 6 * sum(t * t for t in sizes.values())
        assert dataset.positives == dataset.negatives

    def test_stats_per_origin(self):
        collection, split = _world({0: 2, 1: 2})
        dataset, _ = build_pair_dataset(collection, split, seed=3)
        assert dataset.stats["direct"] == 8
        assert dataset.stats["concat_left"] == 8
        assert dataset.stats["concat_right"] == 8
        assert dataset.stats["negative"] == 24

    def test_build_is_deterministic(self):
        collection, split = _world({0: 3, 1: 3})
        first, _ = build_pair_dataset(collection, split, seed=42)
        second, _ = build_pair_dataset(collection, split, seed=42)
        assert first.records == second.records

    def test_jsonl_roundtrip_recovers_origins(self, tmp_path):
        collection, split = _world({0: 2, 1: 2})
        dataset, _ = build_pair_dataset(collection, split, seed=8)
        path = tmp_path / "pairs.jsonl"
        write_pairs(dataset.records, path)
        back = read_pairs(path)
        assert [(r.query_id, r.passage_id, r.hard_label) for r in back] == [
            (r.query_id, r.passage_id, r.hard_label) for r in dataset.records
        ]
        # Origins are inferred, exact except diagonal concats (a+a, a) where
        # left and right records are indistinguishable on the wire.
        for original, restored in zip(dataset.records, back):
            if original.origin is PairOrigin.CONCAT_RIGHT and original.query_id == (
                original.passage_id + "+" + original.passage_id
            ):
                assert restored.origin is PairOrigin.CONCAT_LEFT
            else:
                assert restored.origin is original.origin

    def test_hard_label_consistency_enforced(self):
        from softtune.pairgen import PairRecord

        with pytest.raises(ValueError, match="inconsistent"):
            PairRecord("a", "b", 0, PairOrigin.DIRECT)
        with pytest.raises(ValueError, match="inconsistent"):
            PairRecord("a", "b", 1, PairOrigin.NEGATIVE)
