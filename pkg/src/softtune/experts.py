"""Expert panels: per-pair cosine scores and soft regression targets.

Given K expert embedding models, each pair gets a score vector of K
cosines. The three soft targets derived from it:

* soft1 -- the extreme selected by the hard label (max for positives,
  min for negatives),
* soft2 -- the plain mean, ignoring the hard label,
* soft3 -- the mean of the two extremes on the hard label's side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import DegenerateVectorError, EmbeddingMatrix
from .pairgen import PairRecord, _infer_origin


class MissingEmbeddingError(KeyError):
    pass


@dataclass(frozen=True)
class ExpertPanel:
    """Ordered list of (model_id, matrix); ordering is part of the contract
    because active-set statistics cite experts by position."""

    experts: tuple[tuple[str, EmbeddingMatrix], ...]

    def __post_init__(self):
        if not self.experts:
            raise ValueError("panel needs at least one expert")

    @property
    def size(self) -> int:
        return len(self.experts)

    def model_ids(self) -> list[str]:
        return [model_id for model_id, _ in self.experts]


@dataclass(frozen=True)
class LabeledPair:
    pair: PairRecord
    scores: tuple[float, ...]
    soft1: float | None = None
    soft2: float | None = None
    soft3: float | None = None


def soft1(scores: Sequence[float], hard_label: int) -> float:
    """Extreme expert score on the hard label's side."""
    if len(scores) == 0:
        raise ValueError("empty scores")
    return max(scores) if hard_label == 1 else min(scores)


def soft2(scores: Sequence[float]) -> float:
    """Arithmetic mean of the expert scores, accumulated in float64."""
    if len(scores) == 0:
        raise ValueError("empty scores")
    return float(np.asarray(scores, dtype=np.float64).sum() / len(scores))


def soft3(scores: Sequence[float], hard_label: int) -> float:
    """Mean of the two highest (positives) or two lowest (negatives) scores."""
    if len(scores) < 2:
        raise ValueError("soft3 requires K >= 2")
    ordered = sorted(float(s) for s in scores)
    chosen = ordered[-2:] if hard_label == 1 else ordered[:2]
    return (chosen[0] + chosen[1]) / 2.0


def score_pairs(panel: ExpertPanel, pairs: Sequence[PairRecord]) -> list[LabeledPair]:
    """Cosine of every pair under every expert, in panel order.

    Scores are cached on the returned records so the soft labels can be
    re-derived later without touching the matrices again.
    """
    n = len(pairs)
    all_scores = np.empty((n, panel.size), dtype=np.float64)
    query_ids = [p.query_id for p in pairs]
    passage_ids = [p.passage_id for p in pairs]
    for k, (model_id, matrix) in enumerate(panel.experts):
        all_scores[:, k] = _cosine_column(matrix, model_id, query_ids, passage_ids)
    return [
        LabeledPair(pair=pairs[i], scores=tuple(all_scores[i]))
        for i in range(n)
    ]


def _cosine_column(
    matrix: EmbeddingMatrix, model_id: str, query_ids: list[str], passage_ids: list[str]
) -> np.ndarray:
    def stack(ids: list[str]) -> np.ndarray:
        out = np.empty((len(ids), matrix.dim), dtype=np.float64)
        for i, tid in enumerate(ids):
            try:
                out[i] = matrix.rows[tid]
            except KeyError:
                raise MissingEmbeddingError(
                    f"expert {model_id!r} has no embedding for text_id {tid!r}"
                ) from None
        return out

    q = stack(query_ids)
    p = stack(passage_ids)
    qn = np.sqrt(np.einsum("ij,ij->i", q, q))
    pn = np.sqrt(np.einsum("ij,ij->i", p, p))
    for norms, ids in ((qn, query_ids), (pn, passage_ids)):
        bad = np.flatnonzero(norms == 0.0)
        if bad.size:
            raise DegenerateVectorError(
                f"degenerate vector: zero norm for {ids[bad[0]]!r} under {model_id!r}"
            )
    return np.clip(np.einsum("ij,ij->i", q, p) / (qn * pn), -1.0, 1.0)


def derive_soft_labels(scored: Iterable[LabeledPair]) -> list[LabeledPair]:
    """Fill soft1/soft2/soft3 from cached scores. soft3 is left unset for K=1."""
    out = []
    for lp in scored:
        y = lp.pair.hard_label
        out.append(LabeledPair(
            pair=lp.pair,
            scores=lp.scores,
            soft1=soft1(lp.scores, y),
            soft2=soft2(lp.scores),
            soft3=soft3(lp.scores, y) if len(lp.scores) >= 2 else None,
        ))
    return out


def label_pairs(panel: ExpertPanel, pairs: Sequence[PairRecord]) -> list[LabeledPair]:
    return derive_soft_labels(score_pairs(panel, pairs))


def active_set_fractions(labeled: Sequence[LabeledPair]) -> np.ndarray:
    """Per-expert fraction of pairs whose score equals the Soft-1 target.

    Ties credit every achieving expert, so the fractions can sum above 1.
    """
    if not labeled:
        raise ValueError("empty dataset")
    k = len(labeled[0].scores)
    hits = np.zeros(k, dtype=np.int64)
    for lp in labeled:
        if lp.soft1 is None:
            raise ValueError("soft1 not populated; run derive_soft_labels first")
        for j, s in enumerate(lp.scores):
            if s == lp.soft1:
                hits[j] += 1
    return hits / float(len(labeled))


def write_labeled(labeled: Iterable[LabeledPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lp in labeled:
            obj = {
                "query_id": lp.pair.query_id,
                "passage_id": lp.pair.passage_id,
                "hard_label": lp.pair.hard_label,
                "expert_scores": list(lp.scores),
            }
            for name in ("soft1", "soft2", "soft3"):
                value = getattr(lp, name)
                if value is not None:
                    obj[name] = value
            f.write(json.dumps(obj))
            f.write("\n")


def read_labeled(path: str | Path) -> list[LabeledPair]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "expert_scores" not in obj:
                raise ValueError(f"{path}:{lineno}: record has no expert_scores")
            query_id = str(obj["query_id"])
            passage_id = str(obj["passage_id"])
            hard_label = int(obj["hard_label"])
            out.append(LabeledPair(
                pair=PairRecord(
                    query_id, passage_id, hard_label,
                    _infer_origin(query_id, passage_id, hard_label),
                ),
                scores=tuple(float(s) for s in obj["expert_scores"]),
                soft1=obj.get("soft1"),
                soft2=obj.get("soft2"),
                soft3=obj.get("soft3"),
            ))
    return out
