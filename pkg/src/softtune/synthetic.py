"""Seeded synthetic Q&A worlds for self-contained runs.

Each group gets an orthonormal ground-truth centroid on the unit sphere;
questions and the group passage jitter around it. Every expert matrix is
a random orthogonal rotation of the ground truth plus Gaussian noise,
re-normalized, and the base matrix is a deliberately degraded expert so
training has headroom. Concatenated texts produced by pair construction
are embedded up front (normalized sum of the two parts), so any matrix
returned here covers the full pair dataset.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .corpus import DatasetSplit, EmbeddingMatrix, GroupSplit, TextCollection, TextItem
from .pairgen import PairOrigin, build_positive_pairs

QUESTION_JITTER = 0.1
BASE_NOISE_FLOOR = 0.3
BASE_NOISE_FACTOR = 3.0


def derive_rng(seed: int, *labels: str | int) -> np.random.Generator:
    """A generator keyed by the top-level seed plus stage labels."""
    entropy = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    for label in labels:
        entropy.append(label if isinstance(label, int) else zlib.crc32(label.encode()))
    return np.random.default_rng(entropy)


@dataclass(frozen=True)
class SyntheticWorld:
    group_count: int
    train_per_group: int
    heldout_per_group: int
    dim: int
    expert_count: int
    expert_noise: float
    seed: int

    def __post_init__(self):
        if self.group_count < 2:
            raise ValueError("need at least 2 groups")
        if self.train_per_group < 1:
            raise ValueError("need at least 1 train question per group")
        if self.heldout_per_group < 0:
            raise ValueError("heldout_per_group must be >= 0")
        if self.expert_count < 1:
            raise ValueError("need at least 1 expert")
        if self.expert_noise < 0:
            raise ValueError("expert_noise must be >= 0")
        if self.dim < self.group_count:
            raise ValueError(
                f"cannot separate centroids: dim {self.dim} < {self.group_count} groups"
            )


@dataclass(frozen=True)
class SyntheticData:
    collection: TextCollection
    split: DatasetSplit
    base: EmbeddingMatrix
    experts: tuple[tuple[str, EmbeddingMatrix], ...]
    ground_truth: EmbeddingMatrix


def _orthonormal_centroids(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    gauss = rng.standard_normal((dim, count))
    q, r = np.linalg.qr(gauss)
    return (q * np.sign(np.diag(r))).T  # (count, dim), rows orthonormal


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _random_rotation(rng: np.random.Generator, dim: int) -> np.ndarray:
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    return q * np.sign(np.diag(r))


def _noisy_view(
    truth: np.ndarray, rng: np.random.Generator, noise: float, dim: int
) -> np.ndarray:
    rotated = truth @ _random_rotation(rng, dim).T
    if noise > 0:
        rotated = rotated + noise * rng.standard_normal(rotated.shape)
    return _unit_rows(rotated)


def synth(world: SyntheticWorld) -> SyntheticData:
    """Generate collection, split, and all matrices for one seeded world."""
    items: list[TextItem] = []
    groups: list[GroupSplit] = []
    for g in range(world.group_count):
        question_ids = [
            f"g{g}-q{i}" for i in range(world.train_per_group + world.heldout_per_group)
        ]
        passage_id = f"g{g}-p"
        for i, qid in enumerate(question_ids):
            items.append(TextItem(qid, f"group {g} question paraphrase {i}", g))
        items.append(TextItem(passage_id, f"group {g} passage with the answer", g))
        groups.append(GroupSplit(
            group_id=g,
            train_ids=tuple(question_ids[: world.train_per_group]),
            heldout_ids=tuple(question_ids[world.train_per_group:]),
            passage_id=passage_id,
        ))
    collection = TextCollection(tuple(items))
    split = DatasetSplit(tuple(groups))

    centroids = _orthonormal_centroids(
        derive_rng(world.seed, "centroids"), world.group_count, world.dim
    )
    question_rng = derive_rng(world.seed, "questions")
    group_of = collection.group_of()
    base_ids = collection.ids()
    truth_rows = np.empty((len(base_ids), world.dim))
    for i, tid in enumerate(base_ids):
        jitter = QUESTION_JITTER * question_rng.standard_normal(world.dim)
        truth_rows[i] = centroids[group_of[tid]] + jitter
    truth_rows = _unit_rows(truth_rows)
    index_of = {tid: i for i, tid in enumerate(base_ids)}

    # Pair construction will reference concat texts; derive their ground
    # truth from the parts so every matrix covers the full dataset.
    positives, augmented = build_positive_pairs(collection, split)
    concat_parts: dict[str, list[str]] = {}
    for record in positives:
        if record.origin is PairOrigin.CONCAT_LEFT:
            concat_parts.setdefault(record.query_id, [None, None])[0] = record.passage_id
        elif record.origin is PairOrigin.CONCAT_RIGHT:
            concat_parts.setdefault(record.query_id, [None, None])[1] = record.passage_id
    concat_ids = [item.text_id for item in augmented.items[len(base_ids):]]
    concat_rows = np.empty((len(concat_ids), world.dim))
    for i, cid in enumerate(concat_ids):
        left, right = concat_parts[cid]
        concat_rows[i] = truth_rows[index_of[left]] + truth_rows[index_of[right]]
    all_ids = base_ids + concat_ids
    truth = _unit_rows(np.vstack([truth_rows, concat_rows])) if concat_ids else truth_rows

    def matrix(model_id: str, rows: np.ndarray) -> EmbeddingMatrix:
        rows32 = rows.astype(np.float32)
        return EmbeddingMatrix(
            model_id=model_id,
            dim=world.dim,
            rows={tid: rows32[i] for i, tid in enumerate(all_ids)},
        )

    experts = tuple(
        (
            f"expert_{k:02d}",
            matrix(
                f"expert_{k:02d}",
                _noisy_view(truth, derive_rng(world.seed, "expert", k), world.expert_noise, world.dim),
            ),
        )
        for k in range(world.expert_count)
    )
    base_noise = max(BASE_NOISE_FLOOR, BASE_NOISE_FACTOR * world.expert_noise)
    base = matrix(
        "base",
        _noisy_view(truth, derive_rng(world.seed, "base"), base_noise, world.dim),
    )
    return SyntheticData(
        collection=collection,
        split=split,
        base=base,
        experts=experts,
        ground_truth=matrix("ground_truth", truth),
    )
