"""Retrieval evaluation: ranked metrics, PR curves, similarity
distributions, and cross-model aggregation.

Ranked metrics use binary relevance, a log2 discount with ranks starting
at 1, and ties broken by ascending passage id so every run has one
canonical order. PR curves sweep all distinct observed scores (plus an
implicit empty-prediction point) rather than a fixed lattice, so the
reported AUPRC is exact for the sample.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import EmbeddingMatrix

HISTOGRAM_BINS = 100
HISTOGRAM_RANGE = (-1.0, 1.0)
KL_SMOOTHING_EPS = 1e-10


@dataclass(frozen=True)
class QrelSet:
    """Binary relevance judgments; every judged query has >= 1 relevant passage."""

    relevant: Mapping[str, frozenset[str]]

    def __post_init__(self):
        for qid, passages in self.relevant.items():
            if not passages:
                raise ValueError(f"query {qid!r} has no relevant passages")

    @staticmethod
    def from_dict(mapping: Mapping[str, Iterable[str]]) -> "QrelSet":
        return QrelSet({qid: frozenset(pids) for qid, pids in mapping.items()})


@dataclass(frozen=True)
class RunRanking:
    """Per-query ranked lists, sorted by descending score then ascending passage id."""

    rankings: Mapping[str, tuple[tuple[str, float], ...]]

    @staticmethod
    def from_scores(scores: Mapping[str, Mapping[str, float] | Iterable[tuple[str, float]]]) -> "RunRanking":
        rankings = {}
        for qid, entries in scores.items():
            pairs = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
            seen = set()
            for pid, _ in pairs:
                if pid in seen:
                    raise ValueError(f"duplicate passage {pid!r} for query {qid!r}")
                seen.add(pid)
            pairs.sort(key=lambda e: (-e[1], e[0]))
            rankings[qid] = tuple((pid, float(s)) for pid, s in pairs)
        return RunRanking(rankings)


@dataclass(frozen=True)
class PRCurve:
    """Threshold-indexed precision/recall points plus the trapezoidal AUPRC.

    The first point is the empty-prediction anchor (threshold inf,
    precision 1, recall 0); thresholds decrease strictly from there.
    """

    points: tuple[tuple[float, float, float], ...]
    auprc: float


@dataclass(frozen=True)
class SimilaritySample:
    kind: str  # "intra" or "inter"
    query_group: int
    passage_group: int
    value: float

    def __post_init__(self):
        expected = "intra" if self.query_group == self.passage_group else "inter"
        if self.kind != expected:
            raise ValueError(
                f"kind {self.kind!r} inconsistent with groups "
                f"({self.query_group}, {self.passage_group})"
            )


@dataclass(frozen=True)
class Histogram:
    masses: tuple[float, ...]
    lo: float
    hi: float

    def smoothed(self, eps: float = KL_SMOOTHING_EPS) -> "Histogram":
        """Zero bins replaced by ``eps`` so the KL logs stay finite."""
        return Histogram(tuple(m if m > 0.0 else eps for m in self.masses), self.lo, self.hi)


def _relevant_for(run: RunRanking, qrels: QrelSet, qid: str) -> frozenset[str]:
    try:
        return qrels.relevant[qid]
    except KeyError:
        raise ValueError(f"query {qid!r} present in run but absent from qrels") from None


def ndcg_at_k(run: RunRanking, qrels: QrelSet, k: int) -> tuple[dict[str, float], float]:
    """Binary nDCG@k per query and its mean; gain 1, discount 1/log2(rank+1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_query = {}
    for qid, ranking in run.rankings.items():
        relevant = _relevant_for(run, qrels, qid)
        dcg = 0.0
        for rank, (pid, _) in enumerate(ranking[:k], start=1):
            if pid in relevant:
                dcg += 1.0 / math.log2(rank + 1)
        ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(relevant), k) + 1))
        per_query[qid] = dcg / ideal
    return per_query, _mean(per_query)


def map_at_k(run: RunRanking, qrels: QrelSet, k: int) -> tuple[dict[str, float], float]:
    """AP@k per query (precision-at-hit average over min(relevant, k)) and its mean."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_query = {}
    for qid, ranking in run.rankings.items():
        relevant = _relevant_for(run, qrels, qid)
        hits = 0
        precision_sum = 0.0
        for rank, (pid, _) in enumerate(ranking[:k], start=1):
            if pid in relevant:
                hits += 1
                precision_sum += hits / rank
        per_query[qid] = precision_sum / min(len(relevant), k)
    return per_query, _mean(per_query)


def mrr_at_k(run: RunRanking, qrels: QrelSet, k: int) -> tuple[dict[str, float], float]:
    """Reciprocal rank of the first relevant passage within k, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    per_query = {}
    for qid, ranking in run.rankings.items():
        relevant = _relevant_for(run, qrels, qid)
        rr = 0.0
        for rank, (pid, _) in enumerate(ranking[:k], start=1):
            if pid in relevant:
                rr = 1.0 / rank
                break
        per_query[qid] = rr
    return per_query, _mean(per_query)


def _mean(per_query: dict[str, float]) -> float:
    if not per_query:
        raise ValueError("no queries to average")
    return sum(per_query.values()) / len(per_query)


def _as_score_label_arrays(
    samples: Sequence[SimilaritySample] | Sequence[tuple[float, int]],
) -> tuple[np.ndarray, np.ndarray]:
    if samples and isinstance(samples[0], SimilaritySample):
        scores = np.asarray([s.value for s in samples], dtype=np.float64)
        labels = np.asarray([1 if s.kind == "intra" else 0 for s in samples], dtype=np.int64)
    else:
        scores = np.asarray([s for s, _ in samples], dtype=np.float64)
        labels = np.asarray([int(l) for _, l in samples], dtype=np.int64)
    return scores, labels


def pr_curve(
    samples: Sequence[SimilaritySample] | Sequence[tuple[float, int]],
    thresholds: Sequence[float] | None = None,
) -> PRCurve:
    """Precision/recall under the rule predicted-positive = score >= threshold.

    With ``thresholds`` unset the sweep visits every distinct observed
    score, descending. Precision is 1 by convention when nothing is
    predicted; AUPRC integrates (recall, precision) by trapezoid from the
    (0, 1) anchor.
    """
    scores, labels = _as_score_label_arrays(samples)
    total_pos = int(labels.sum())
    total_neg = len(labels) - total_pos
    if total_pos == 0 or total_neg == 0:
        raise ValueError("all-one-class input: need at least one positive and one negative")

    if thresholds is None:
        sweep = np.unique(scores)[::-1]
    else:
        sweep = np.unique(np.asarray(thresholds, dtype=np.float64))[::-1]
        sweep = sweep[np.isfinite(sweep)]

    points = [(math.inf, 1.0, 0.0)]
    for t in sweep:
        predicted = scores >= t
        n_pred = int(predicted.sum())
        tp = int(labels[predicted].sum())
        precision = tp / n_pred if n_pred else 1.0
        recall = tp / total_pos
        points.append((float(t), precision, recall))

    recalls = np.asarray([p[2] for p in points])
    precisions = np.asarray([p[1] for p in points])
    auprc = float(np.trapezoid(precisions, recalls))
    return PRCurve(points=tuple(points), auprc=auprc)


def intra_inter(
    heldout_queries: EmbeddingMatrix,
    passages: EmbeddingMatrix,
    grouping: Mapping[str, int],
) -> list[SimilaritySample]:
    """Cosine of every held-out query against every passage, tagged
    intra when both sit in the same group."""
    query_ids = list(heldout_queries.rows.keys())
    passage_ids = list(passages.rows.keys())
    q = heldout_queries.stacked(query_ids).astype(np.float64)
    p = passages.stacked(passage_ids).astype(np.float64)
    qn = np.sqrt(np.einsum("ij,ij->i", q, q))
    pn = np.sqrt(np.einsum("ij,ij->i", p, p))
    if np.any(qn == 0.0) or np.any(pn == 0.0):
        raise ValueError("zero-norm embedding in intra/inter input")
    sims = np.clip((q / qn[:, None]) @ (p / pn[:, None]).T, -1.0, 1.0)
    samples = []
    for i, qid in enumerate(query_ids):
        qg = grouping[qid]
        for j, pid in enumerate(passage_ids):
            pg = grouping[pid]
            samples.append(SimilaritySample(
                kind="intra" if qg == pg else "inter",
                query_group=qg,
                passage_group=pg,
                value=float(sims[i, j]),
            ))
    return samples


def similarity_histogram(
    values: Sequence[float],
    bins: int = HISTOGRAM_BINS,
    value_range: tuple[float, float] = HISTOGRAM_RANGE,
) -> Histogram:
    """Equal-width normalized histogram; out-of-range values clamp into
    the boundary bins."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = value_range
    if not lo < hi:
        raise ValueError("empty value range")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty values")
    counts, _ = np.histogram(np.clip(arr, lo, hi), bins=bins, range=(lo, hi))
    return Histogram(tuple(counts / arr.size), lo, hi)


def symmetric_kl(p: Histogram, q: Histogram) -> float:
    """KL(p||q) + KL(q||p) with natural log over matching bin layouts."""
    if len(p.masses) != len(q.masses) or p.lo != q.lo or p.hi != q.hi:
        raise ValueError("histograms have different bin layouts")
    pm = np.asarray(p.smoothed().masses)
    qm = np.asarray(q.smoothed().masses)
    return float(np.sum(pm * np.log(pm / qm)) + np.sum(qm * np.log(qm / pm)))


@dataclass(frozen=True)
class AggregateReport:
    means: dict[str, float]
    stds: dict[str, float]
    win_rates: dict[tuple[str, str], float]


def aggregate_report(per_dataset_scores: Mapping[str, Mapping[str, float]]) -> AggregateReport:
    """Per-model mean and population std plus pairwise win rates.

    The win rate of A over B counts datasets where A strictly exceeds B;
    ties contribute 0.5. All models must report the same dataset set.
    """
    models = list(per_dataset_scores.keys())
    if not models:
        raise ValueError("no models to aggregate")
    datasets = sorted(per_dataset_scores[models[0]].keys())
    for m in models:
        if sorted(per_dataset_scores[m].keys()) != datasets:
            raise ValueError(f"model {m!r} reports a different dataset set")
    if not datasets:
        raise ValueError("no datasets to aggregate")

    means, stds = {}, {}
    for m in models:
        values = np.asarray([per_dataset_scores[m][d] for d in datasets], dtype=np.float64)
        means[m] = float(values.mean())
        stds[m] = float(values.std())  # population std

    win_rates = {}
    for a in models:
        for b in models:
            if a == b:
                continue
            score = 0.0
            for d in datasets:
                va, vb = per_dataset_scores[a][d], per_dataset_scores[b][d]
                score += 1.0 if va > vb else (0.5 if va == vb else 0.0)
            win_rates[(a, b)] = score / len(datasets)
    return AggregateReport(means=means, stds=stds, win_rates=win_rates)


# --- file formats -----------------------------------------------------------


def _looks_like_json(path: str | Path) -> bool:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                return line.startswith("{")
    return False


def read_qrels_trec(path: str | Path) -> QrelSet:
    """TREC qrels: ``query_id 0 passage_id rel`` per line."""
    relevant: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, pid, rel = parts
            if int(rel) > 0:
                relevant.setdefault(qid, set()).add(pid)
    return QrelSet.from_dict(relevant)


def read_qrels_jsonl(path: str | Path) -> QrelSet:
    relevant: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if int(obj.get("relevance", 1)) > 0:
                relevant.setdefault(str(obj["query_id"]), set()).add(str(obj["passage_id"]))
    return QrelSet.from_dict(relevant)


def load_qrels(path: str | Path) -> QrelSet:
    return read_qrels_jsonl(path) if _looks_like_json(path) else read_qrels_trec(path)


def read_run_trec(path: str | Path) -> RunRanking:
    """TREC run: ``query_id Q0 passage_id rank score tag`` per line."""
    scores: dict[str, list[tuple[str, float]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            qid, _, pid, _, score, _ = parts
            scores.setdefault(qid, []).append((pid, float(score)))
    return RunRanking.from_scores(scores)


def read_run_jsonl(path: str | Path) -> RunRanking:
    scores: dict[str, list[tuple[str, float]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            scores.setdefault(str(obj["query_id"]), []).append(
                (str(obj["passage_id"]), float(obj["score"]))
            )
    return RunRanking.from_scores(scores)


def load_run(path: str | Path) -> RunRanking:
    return read_run_jsonl(path) if _looks_like_json(path) else read_run_trec(path)


def write_run_trec(run: RunRanking, path: str | Path, tag: str = "softtune") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid in run.rankings:
            for rank, (pid, score) in enumerate(run.rankings[qid], start=1):
                f.write(f"{qid} Q0 {pid} {rank} {_fmt(score)} {tag}\n")


def _fmt(value: float) -> str:
    return format(value, ".10g")


def write_metrics_csv(rows: Iterable[tuple[str, str, str, float]], path: str | Path) -> None:
    """Rows of (metric, model, dataset, value)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "model", "dataset", "value"])
        for metric, model, dataset, value in rows:
            writer.writerow([metric, model, dataset, _fmt(value)])


def write_pr_curve_csv(curve: PRCurve, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "precision", "recall"])
        for threshold, precision, recall in curve.points:
            writer.writerow([_fmt(threshold), _fmt(precision), _fmt(recall)])


def write_kl_csv(
    rows: Iterable[tuple[str, str, float]],
    path: str | Path,
    bins: int = HISTOGRAM_BINS,
    value_range: tuple[float, float] = HISTOGRAM_RANGE,
) -> None:
    # Binning is part of the result, so it rides along in every row.
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model_a", "model_b", "bins", "lo", "hi", "symmetric_kl"])
        for model_a, model_b, value in rows:
            writer.writerow([
                model_a, model_b, bins, _fmt(value_range[0]), _fmt(value_range[1]), _fmt(value),
            ])
