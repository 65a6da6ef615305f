#!/usr/bin/env python3
# metrics.py - Ranking-quality metrics and soft vs hard LSH ranking comparison

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from socketlsh.errors import ParameterError, SelectionError
from socketlsh.lsh_core import LshParams, build_tables, hash_keys, hash_query
from socketlsh.parallel import derive_seed, parallel_map
from socketlsh.soft_scoring import (SoftHashConfig, hard_score, soft_bucket_probs,
                                    soft_score)
from socketlsh.synthetic import gaussian_cache, gaussian_query

GRADE_LEVELS = 16
METHODS = ("socket", "hard_lsh")


@dataclass(frozen=True, eq=False)
class RankingInstance:
    ground_truth_scores: np.ndarray
    method_ranking: np.ndarray
    truth_top_k: np.ndarray

    def __post_init__(self):
        ranking = np.asarray(self.method_ranking)
        N = np.asarray(self.ground_truth_scores).shape[0]
        if np.unique(ranking).shape[0] != ranking.shape[0]:
            raise ParameterError("method ranking contains duplicate indices")
        if ranking.size and (ranking.min() < 0 or ranking.max() >= N):
            raise ParameterError(f"method ranking has indices outside [0, {N})")

    @property
    def k(self) -> int:
        return int(np.asarray(self.method_ranking).shape[0])

    @classmethod
    def from_scores(cls, ground_truth, method_scores, k: int) -> "RankingInstance":
        """Top-k of `method_scores` (ties to smaller index) against the true top-k."""
        ground_truth = np.asarray(ground_truth, dtype=np.float64)
        method_scores = np.asarray(method_scores, dtype=np.float64)
        if not 1 <= k <= ground_truth.shape[0]:
            raise ParameterError(f"k must lie in [1, {ground_truth.shape[0]}], got {k}")
        ranking = np.argsort(-method_scores, kind="stable")[:k]
        truth = np.argsort(-ground_truth, kind="stable")[:k]
        return cls(ground_truth_scores=ground_truth, method_ranking=ranking,
                   truth_top_k=truth)


@dataclass(frozen=True, eq=False)
class HistogramReport:
    bin_edges: np.ndarray
    counts: np.ndarray
    cutoff: float
    mass_above_cutoff: float

    def rows(self):
        """(bin_left, bin_right, count) rows."""
        return [(float(self.bin_edges[i]), float(self.bin_edges[i + 1]), int(c))
                for i, c in enumerate(self.counts)]


@dataclass(frozen=True, eq=False)
class MetricReport:
    ndcg: float
    precision: float
    jaccard: float
    histogram: HistogramReport

    @property
    def cutoff(self) -> float:
        return self.histogram.cutoff


def relevance_grades(scores, levels: int = GRADE_LEVELS) -> np.ndarray:
    """Integer grades 0..levels-1 by rank quantile; the best score gets the top grade."""
    scores = np.asarray(scores, dtype=np.float64)
    N = scores.shape[0]
    ranks = np.empty(N, dtype=np.int64)
    ranks[np.argsort(scores, kind="stable")] = np.arange(N)
    return (ranks * levels) // max(N, 1)


def ndcg(relevance_in_rank_order, ideal=None) -> float:
    """
    DCG / IDCG with gains 2^r - 1 and discount log2(i + 1).

    `ideal` is the pool the ideal ordering is drawn from (defaults to the
    given relevances); its best len(relevance) entries form IDCG. IDCG = 0
    counts as a perfect ranking.
    """
    rel = np.asarray(relevance_in_rank_order, dtype=np.float64).reshape(-1)
    if rel.size == 0:
        raise ParameterError("NDCG needs at least one relevance value")
    if not np.all(np.isfinite(rel)):
        raise ParameterError("relevances must be finite")
    pool = rel if ideal is None else np.asarray(ideal, dtype=np.float64).reshape(-1)
    best = np.sort(pool)[::-1][:rel.size]

    discounts = 1.0 / np.log2(np.arange(2, rel.size + 2))
    dcg = float(((np.exp2(rel) - 1.0) * discounts).sum())
    idcg = float(((np.exp2(best) - 1.0) * discounts[:best.size]).sum())
    if idcg <= 0:
        return 1.0
    return dcg / idcg


def precision(selected, relevant, k: int) -> float:
    if k <= 0:
        raise ParameterError(f"precision needs k >= 1, got {k}")
    return len(set(np.asarray(selected).tolist()) & set(np.asarray(relevant).tolist())) / k


def jaccard(a, b) -> float:
    """|A & B| / |A | B|; two empty sets are identical, so 1.0."""
    a = set(np.asarray(a).tolist())
    b = set(np.asarray(b).tolist())
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def selection_histogram(instance: RankingInstance, bins: int = 50) -> HistogramReport:
    """Histogram of true scores of the selected keys and the mass at or above the k-th true score."""
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    ranking = np.asarray(instance.method_ranking)
    if ranking.size == 0:
        raise SelectionError("cannot histogram an empty selection")
    truth = np.asarray(instance.ground_truth_scores, dtype=np.float64)
    selected_scores = truth[ranking]
    counts, edges = np.histogram(selected_scores, bins=bins)
    cutoff = float(np.sort(truth)[::-1][ranking.size - 1])
    mass = float(np.count_nonzero(selected_scores >= cutoff)) / ranking.size
    return HistogramReport(bin_edges=edges, counts=counts, cutoff=cutoff,
                           mass_above_cutoff=mass)


def evaluate_ranking(instance: RankingInstance, bins: int = 50) -> MetricReport:
    grades = relevance_grades(instance.ground_truth_scores)
    ranking = np.asarray(instance.method_ranking)
    return MetricReport(
        ndcg=ndcg(grades[ranking], ideal=grades),
        precision=precision(ranking, instance.truth_top_k, instance.k),
        jaccard=jaccard(ranking, instance.truth_top_k),
        histogram=selection_histogram(instance, bins),
    )


@dataclass
class ComparisonRow:
    method: str
    k: int
    seed: int
    ndcg: float
    precision: float
    jaccard: float
    mass_above_cutoff: float
    cutoff: float


@dataclass
class ComparisonSummary:
    rows: List[ComparisonRow]
    means: Dict[str, Dict[int, Dict[str, float]]] = field(default_factory=dict)
    standard_errors: Dict[str, Dict[int, Dict[str, float]]] = field(default_factory=dict)
    # (bin_left, bin_right, count) rows of the first seed
    histograms: Dict[str, Dict[int, list]] = field(default_factory=dict)


_METRIC_FIELDS = ("ndcg", "precision", "jaccard", "mass_above_cutoff")


def ranking_comparison(N: int, d: int, P: int, L: int, tau: float,
                       k_values: Sequence[int], seeds: int, master_seed: int = 0,
                       bins: int = 50, threads: int = 1) -> ComparisonSummary:
    """
    Soft (SOCKET) vs hard LSH rankings on standard-Gaussian keys.

    Ground truth is q.k; both methods rank by their raw collision scores, hard
    ties going to the smaller index.
    """
    if seeds < 1:
        raise ParameterError(f"seeds must be >= 1, got {seeds}")
    for k in k_values:
        if not 1 <= k <= N:
            raise ParameterError(f"k = {k} must lie in [1, N = {N}]")
    cfg = SoftHashConfig(tau=tau)

    def run_seed(replica):
        seed = derive_seed(master_seed, replica)
        cache = gaussian_cache(N, d, derive_seed(seed, 0))
        q = gaussian_query(d, derive_seed(seed, 1))
        tables = build_tables(LshParams(P=P, L=L, d=d, seed=derive_seed(seed, 2)))
        assignment = hash_keys(tables, cache)
        truth = np.asarray(cache.keys, dtype=np.float64) @ q
        method_scores = {
            "socket": soft_score(soft_bucket_probs(tables, q, cfg), assignment).w_hat,
            "hard_lsh": hard_score(hash_query(tables, q), assignment),
        }
        rows, histograms = [], {}
        for k in k_values:
            for method in METHODS:
                instance = RankingInstance.from_scores(truth, method_scores[method], k)
                report = evaluate_ranking(instance, bins)
                rows.append(ComparisonRow(method=method, k=int(k), seed=replica,
                                          ndcg=report.ndcg, precision=report.precision,
                                          jaccard=report.jaccard,
                                          mass_above_cutoff=report.histogram.mass_above_cutoff,
                                          cutoff=report.cutoff))
                if replica == 0:
                    histograms.setdefault(method, {})[int(k)] = report.histogram.rows()
        return rows, histograms

    outputs = parallel_map(run_seed, range(seeds), threads)
    rows = [row for chunk, _ in outputs for row in chunk]
    summary = ComparisonSummary(rows=rows, histograms=outputs[0][1])
    for method in METHODS:
        summary.means[method] = {}
        summary.standard_errors[method] = {}
        for k in k_values:
            picked = [r for r in rows if r.method == method and r.k == k]
            summary.means[method][int(k)] = {}
            summary.standard_errors[method][int(k)] = {}
            for name in _METRIC_FIELDS:
                values = np.array([getattr(r, name) for r in picked])
                summary.means[method][int(k)][name] = float(values.mean())
                se = values.std(ddof=1) / math.sqrt(len(values)) if len(values) > 1 else 0.0
                summary.standard_errors[method][int(k)][name] = float(se)
    return summary


def dominance_checks(summary: ComparisonSummary, strict_mass_k: Optional[int] = None) -> Dict[str, bool]:
    """socket mean >= hard_lsh mean for every metric and k."""
    checks = {}
    for k, soft in summary.means["socket"].items():
        hard = summary.means["hard_lsh"][k]
        for name in ("ndcg", "precision", "jaccard"):
            checks[f"{name}_k{k}"] = soft[name] >= hard[name]
    if strict_mass_k is not None and strict_mass_k in summary.means["socket"]:
        k = strict_mass_k
        checks[f"mass_above_cutoff_k{k}"] = (
            summary.means["socket"][k]["mass_above_cutoff"]
            > summary.means["hard_lsh"][k]["mass_above_cutoff"]
        )
    return checks
