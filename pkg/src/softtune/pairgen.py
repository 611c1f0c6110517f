"""Query-passage pair construction: ordered positives, concatenation
tripling, and balanced cross-group negatives.

For a group with train questions q_1..q_T every ordered pair (q_a, q_b)
yields three positives: the pair itself, plus ("q_a. q_b", q_a) and
("q_a. q_b", q_b) built from the concatenated text. Negatives reuse the
positive queries and draw a train question from a different group, one
per positive, so the dataset is always balanced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import DatasetSplit, TextCollection, TextItem

CONCAT_SEPARATOR = ". "


class PairOrigin(str, Enum):
    DIRECT = "direct"
    CONCAT_LEFT = "concat_left"
    CONCAT_RIGHT = "concat_right"
    NEGATIVE = "negative"


class EmptyGroupError(ValueError):
    pass


class NegativeSamplingError(ValueError):
    pass


@dataclass(frozen=True)
class PairRecord:
    query_id: str
    passage_id: str
    hard_label: int
    origin: PairOrigin

    def __post_init__(self):
        expected = 0 if self.origin is PairOrigin.NEGATIVE else 1
        if self.hard_label != expected:
            raise ValueError(
                f"hard_label {self.hard_label} inconsistent with origin {self.origin.value}"
            )


@dataclass(frozen=True)
class PairDataset:
    records: tuple[PairRecord, ...]
    seed: int
    stats: Mapping[str, int]

    @property
    def positives(self) -> int:
        return sum(1 for r in self.records if r.hard_label == 1)

    @property
    def negatives(self) -> int:
        return sum(1 for r in self.records if r.hard_label == 0)


def concat_text_id(left_id: str, right_id: str) -> str:
    return f"{left_id}+{right_id}"


def build_positive_pairs(
    collection: TextCollection, split: DatasetSplit
) -> tuple[list[PairRecord], TextCollection]:
    """All positive pairs plus the collection extended with concat texts.

    Per group this emits the full T x T ordered grid (diagonal included)
    as direct pairs, then two concat records per ordered pair. Returns
    the records and a new collection carrying the synthetic concat items.
    """
    texts = collection.texts()
    records: list[PairRecord] = []
    concat_items: list[TextItem] = []
    for group in sorted(split.groups, key=lambda g: g.group_id):
        if not group.train_ids:
            raise EmptyGroupError(f"empty group: {group.group_id} has no train questions")
        for a in group.train_ids:
            for b in group.train_ids:
                records.append(PairRecord(a, b, 1, PairOrigin.DIRECT))
        for a in group.train_ids:
            for b in group.train_ids:
                cid = concat_text_id(a, b)
                concat_items.append(TextItem(
                    text_id=cid,
                    text=texts[a] + CONCAT_SEPARATOR + texts[b],
                    group_id=group.group_id,
                ))
                records.append(PairRecord(cid, a, 1, PairOrigin.CONCAT_LEFT))
                records.append(PairRecord(cid, b, 1, PairOrigin.CONCAT_RIGHT))
    return records, collection.extended(concat_items)


def build_negative_pairs(
    collection: TextCollection,
    split: DatasetSplit,
    positives: Sequence[PairRecord],
    seed: int,
) -> list[PairRecord]:
    """One negative per positive: same query, train passage from a foreign group.

    ``collection`` must be the concat-extended collection so concat queries
    resolve to their group. Draws come from per-group RNG streams derived
    from (seed, group_id), so the result is deterministic and groups can be
    sampled independently.
    """
    groups = sorted(g.group_id for g in split.groups)
    if len(groups) < 2:
        raise NegativeSamplingError("cannot sample negatives: need at least 2 groups")
    group_of = collection.group_of()
    train_by_group = {g.group_id: list(g.train_ids) for g in split.groups}
    foreign_pool = {
        gid: np.array(
            [tid for other, tids in sorted(train_by_group.items()) if other != gid for tid in tids]
        )
        for gid in groups
    }

    # Batch the draws per query group so each group consumes its own stream.
    positions_by_group: dict[int, list[int]] = {}
    for i, record in enumerate(positives):
        positions_by_group.setdefault(group_of[record.query_id], []).append(i)

    out: list[PairRecord | None] = [None] * len(positives)
    for gid in sorted(positions_by_group):
        positions = positions_by_group[gid]
        pool = foreign_pool[gid]
        rng = np.random.default_rng([seed, gid])
        draws = rng.integers(0, len(pool), size=len(positions))
        for pos, draw in zip(positions, draws):
            out[pos] = PairRecord(
                positives[pos].query_id, str(pool[draw]), 0, PairOrigin.NEGATIVE
            )
    return [r for r in out if r is not None]


def build_pair_dataset(
    collection: TextCollection, split: DatasetSplit, seed: int
) -> tuple[PairDataset, TextCollection]:
    """Positives followed by negatives, with per-origin counts."""
    positives, augmented = build_positive_pairs(collection, split)
    negatives = build_negative_pairs(augmented, split, positives, seed)
    records = tuple(positives) + tuple(negatives)
    stats = {origin.value: 0 for origin in PairOrigin}
    for r in records:
        stats[r.origin.value] += 1
    return PairDataset(records=records, seed=seed, stats=stats), augmented


def _infer_origin(query_id: str, passage_id: str, hard_label: int) -> PairOrigin:
    # Origin is not persisted; recover it from the concat id convention.
    if hard_label == 0:
        return PairOrigin.NEGATIVE
    if query_id.startswith(passage_id + "+"):
        return PairOrigin.CONCAT_LEFT
    if query_id.endswith("+" + passage_id):
        return PairOrigin.CONCAT_RIGHT
    return PairOrigin.DIRECT


def write_pairs(records: Iterable[PairRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps({
                "query_id": r.query_id,
                "passage_id": r.passage_id,
                "hard_label": r.hard_label,
            }))
            f.write("\n")


def read_pairs(path: str | Path) -> list[PairRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            query_id = str(obj["query_id"])
            passage_id = str(obj["passage_id"])
            hard_label = int(obj["hard_label"])
            records.append(PairRecord(
                query_id, passage_id, hard_label,
                _infer_origin(query_id, passage_id, hard_label),
            ))
    return records
