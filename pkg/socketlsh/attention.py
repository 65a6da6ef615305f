#!/usr/bin/env python3
# attention.py - Dense, sparse top-k, angular and soft-count attention outputs

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.special import softmax

from socketlsh.errors import (DimensionMismatchError, DomainError, ParameterError,
                              SelectionError)
from socketlsh.lsh_core import KvCache, MAX_HYPERPLANES
from socketlsh.parallel import derive_seed_sequence, parallel_map, spawn_generator
from socketlsh.soft_scoring import (SoftHashConfig, SoftScoreSet, ValueScores,
                                    masked_value_scores, table_soft_scores)

LOGIT_MODES = ("exact", "soft-count")

# fresh tables drawn per batch in population_estimate
_POPULATION_BATCH = 64
# spawn-key prefix keeping population tables apart from build_tables streams
_POPULATION_STREAM = 0x706F70
# allowed drift of sum(sampling_probs) from 1
SAMPLER_SUM_TOL = 1e-9


@dataclass(frozen=True)
class SelectionConfig:
    k: int
    logit_mode: str = "exact"
    sink_tokens: int = 0
    local_window: int = 0
    scale: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise SelectionError(f"token budget k must be positive, got {self.k}")
        if self.logit_mode not in LOGIT_MODES:
            raise ParameterError(
                f"logit_mode must be one of {LOGIT_MODES}, got {self.logit_mode!r}"
            )
        if self.sink_tokens < 0 or self.local_window < 0:
            raise ParameterError("sink_tokens and local_window must be non-negative")
        if self.sink_tokens + self.local_window > self.k:
            raise ParameterError(
                f"sink_tokens + local_window = {self.sink_tokens + self.local_window} "
                f"exceeds the budget k = {self.k}"
            )


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    M: int
    seed: int
    sampling_probs: np.ndarray

    def __post_init__(self):
        if self.M < 1:
            raise ParameterError(f"sample count M must be >= 1, got {self.M}")
        probs = np.asarray(self.sampling_probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ParameterError("sampling_probs must be a non-empty vector")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ParameterError("sampling_probs must be finite and non-negative")
        total = float(probs.sum())
        if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=SAMPLER_SUM_TOL):
            raise ParameterError(f"sampling_probs must sum to 1, got {total!r}")
        object.__setattr__(self, "sampling_probs", probs)


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    output: np.ndarray
    weights: np.ndarray
    selected: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class AngularTarget:
    kernel_weights: np.ndarray
    normalizer: float
    distribution: np.ndarray
    output: np.ndarray


@dataclass(frozen=True, eq=False)
class PopulationEstimate:
    w_tau: np.ndarray
    z_tau: float
    a_tau: np.ndarray
    output: np.ndarray
    epsilon_tau: float
    mc_tables: int
    standard_errors: Dict[str, object] = field(default_factory=dict)
    max_bucket_occupancy: int = 0


def _as_query(q, cache: KvCache) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != cache.d:
        raise DimensionMismatchError(f"query has dimension {q.shape[0]}, cache has {cache.d}")
    return q


def _weighted_sum(weights: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """sum_j weights_j v_j in double precision, reduced in index order."""
    terms = weights[:, None] * np.asarray(vectors, dtype=np.float64)
    return np.add.reduce(terms, axis=0)


def _logits(q: np.ndarray, keys: np.ndarray, scale: bool) -> np.ndarray:
    logits = np.asarray(keys, dtype=np.float64) @ q
    if scale:
        logits = logits / math.sqrt(q.shape[0])
    return logits


def dense_attention(q, cache: KvCache, scale: bool = False) -> AttentionOutput:
    """Softmax attention over every unmasked key; no 1/sqrt(d) unless `scale`."""
    q = _as_query(q, cache)
    mask = np.asarray(cache.mask, dtype=bool)
    if not mask.any():
        raise SelectionError("cannot attend over an empty or fully masked cache")
    logits = np.where(mask, _logits(q, cache.keys, scale), -np.inf)
    weights = softmax(logits)
    return AttentionOutput(output=_weighted_sum(weights, cache.values), weights=weights)


def select_top_k(ranking: ValueScores, sel: SelectionConfig) -> np.ndarray:
    """
    Sink and local-window tokens first, then the best remaining scores.

    Ties go to the smaller index. Returns the selected indices in ascending order.
    """
    selectable = ranking.selectable
    N = selectable.shape[0]
    available = int(selectable.sum())
    if available == 0:
        raise SelectionError("every key is masked; nothing to select")
    if sel.k > N:
        raise SelectionError(f"budget k = {sel.k} exceeds the cache size N = {N}")
    if sel.k > available:
        raise SelectionError(f"budget k = {sel.k} exceeds the {available} unmasked keys")

    forced = np.zeros(N, dtype=bool)
    forced[:min(sel.sink_tokens, N)] = True
    if sel.local_window:
        forced[max(0, N - sel.local_window):] = True
    forced &= selectable

    remaining = sel.k - int(forced.sum())
    candidates = np.flatnonzero(selectable & ~forced)
    order = np.argsort(-ranking.scores[candidates], kind="stable")
    chosen = candidates[order[:remaining]]
    return np.sort(np.concatenate([np.flatnonzero(forced), chosen]))


def attend_subset(q, cache: KvCache, selected: np.ndarray, logit_mode: str = "exact",
                  soft_counts: Optional[np.ndarray] = None, scale: bool = False) -> AttentionOutput:
    """Softmax attention restricted to `selected`."""
    q = _as_query(q, cache)
    if logit_mode == "exact":
        logits = _logits(q, cache.keys[selected], scale)
    elif logit_mode == "soft-count":
        if soft_counts is None:
            raise ParameterError("soft-count logits need the soft scores w_hat")
        logits = np.asarray(soft_counts, dtype=np.float64)[selected]
    else:
        raise ParameterError(f"unknown logit mode {logit_mode!r}")
    weights = softmax(logits)
    output = _weighted_sum(weights, cache.values[selected])
    return AttentionOutput(output=output, weights=weights, selected=selected)


def sparse_attention(q, cache: KvCache, scores: SoftScoreSet,
                     sel: SelectionConfig) -> AttentionOutput:
    """Value-aware top-k attention over soft collision scores."""
    ranking = masked_value_scores(scores, cache)
    selected = select_top_k(ranking, sel)
    return attend_subset(q, cache, selected, sel.logit_mode,
                         soft_counts=scores.w_hat, scale=sel.scale)


def hard_lsh_attention(q, cache: KvCache, hard_scores: np.ndarray,
                       sel: SelectionConfig) -> AttentionOutput:
    """Same pipeline ranked by hard collision counts times value norms."""
    ranking = masked_value_scores(hard_scores, cache)
    selected = select_top_k(ranking, sel)
    return attend_subset(q, cache, selected, sel.logit_mode,
                         soft_counts=hard_scores, scale=sel.scale)


def oracle_top_k_attention(q, cache: KvCache, sel: SelectionConfig) -> AttentionOutput:
    """Top-k by the exact logits q.k (reads every key)."""
    q = _as_query(q, cache)
    exact = _logits(q, cache.keys, False)
    ranking = ValueScores(scores=np.where(cache.mask, exact, -np.inf),
                          selectable=np.asarray(cache.mask, dtype=bool))
    selected = select_top_k(ranking, sel)
    return attend_subset(q, cache, selected, "exact", scale=sel.scale)


def angular_kernel_weights(q, keys, P: int) -> np.ndarray:
    """(1 - arccos(cos(q, k_j)) / pi)^P for every key."""
    if not 1 <= P <= MAX_HYPERPLANES:
        raise ParameterError(f"P must lie in [1, {MAX_HYPERPLANES}], got {P}")
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    keys = np.asarray(keys, dtype=np.float64)
    q_norm = np.linalg.norm(q)
    if q_norm == 0:
        raise DomainError("query has zero norm; the angular kernel is undefined")
    key_norms = np.linalg.norm(keys, axis=1)
    zero = np.flatnonzero(key_norms == 0)
    if zero.size:
        raise DomainError(
            f"key {int(zero[0])} has zero norm; the angular kernel is undefined"
        )
    cosine = np.clip((keys @ q) / (key_norms * q_norm), -1.0, 1.0)
    base = 1.0 - np.arccos(cosine) / math.pi
    return base ** P


def angular_attention(q, cache: KvCache, P: int) -> AngularTarget:
    q = _as_query(q, cache)
    weights = angular_kernel_weights(q, cache.keys, P)
    normalizer = float(np.cumsum(weights)[-1]) if weights.size else 0.0
    if normalizer <= 0:
        raise DomainError("angular normalizer Z is zero: every key is antipodal to the query")
    distribution = weights / normalizer
    return AngularTarget(kernel_weights=weights, normalizer=normalizer,
                         distribution=distribution,
                         output=_weighted_sum(distribution, cache.values))


def finite_table_output(scores: SoftScoreSet, cache: KvCache) -> np.ndarray:
    """y_{tau,L} = sum_j a~_j v_j."""
    if scores.N != cache.N:
        raise DimensionMismatchError(f"{scores.N} scores for {cache.N} keys")
    assert scores.z_tilde > 0, "Z~ is positive whenever tau > 0"
    return _weighted_sum(scores.a_tilde, cache.values)


def population_estimate(q, cache: KvCache, cfg: SoftHashConfig, P: int, mc_tables: int,
                        seed: int, threads: int = 1) -> PopulationEstimate:
    """
    Monte-Carlo population quantities over `mc_tables` fresh single tables.

    w_tau,j is the mean per-table soft score of key j and epsilon_tau the mean
    mass the query puts outside its own hard bucket. Tables come in fixed-size
    batches with their own derived seeds, so the estimate does not depend on
    the number of threads.
    """
    if mc_tables < 100:
        raise ParameterError(f"mc_tables must be >= 100, got {mc_tables}")
    if not 1 <= P <= MAX_HYPERPLANES:
        raise ParameterError(f"P must lie in [1, {MAX_HYPERPLANES}], got {P}")
    q = _as_query(q, cache)
    keys = np.asarray(cache.keys, dtype=np.float64)
    R = 1 << P

    batches = []
    for index, start in enumerate(range(0, mc_tables, _POPULATION_BATCH)):
        batches.append((index, min(_POPULATION_BATCH, mc_tables - start)))

    def run_batch(batch):
        index, size = batch
        rng = np.random.default_rng(derive_seed_sequence(seed, _POPULATION_STREAM, index))
        planes = rng.standard_normal((size, P, cache.d))
        scores, hard_mass, key_ids, _ = table_soft_scores(planes, q, keys, cfg)
        eps = 1.0 - hard_mass
        table_sums = scores.sum(axis=1)
        occupancy = max(int(np.bincount(ids, minlength=R).max()) for ids in key_ids)
        return (scores.sum(axis=0), (scores ** 2).sum(axis=0), eps.sum(), (eps ** 2).sum(),
                table_sums.sum(), (table_sums ** 2).sum(), occupancy)

    parts = parallel_map(run_batch, batches, threads)
    T = float(mc_tables)
    sum_s = np.add.reduce([p[0] for p in parts])
    sum_s2 = np.add.reduce([p[1] for p in parts])
    sum_e = math.fsum(p[2] for p in parts)
    sum_e2 = math.fsum(p[3] for p in parts)
    sum_z = math.fsum(p[4] for p in parts)
    sum_z2 = math.fsum(p[5] for p in parts)

    w_tau = sum_s / T
    z_tau = float(np.cumsum(w_tau)[-1])
    a_tau = w_tau / z_tau
    epsilon = sum_e / T

    def standard_error(total, total_sq):
        mean = total / T
        return np.sqrt(np.maximum(total_sq / T - mean ** 2, 0.0) / (T - 1))

    return PopulationEstimate(
        w_tau=w_tau,
        z_tau=z_tau,
        a_tau=a_tau,
        output=_weighted_sum(a_tau, cache.values),
        epsilon_tau=epsilon,
        mc_tables=mc_tables,
        standard_errors={
            "w_tau": standard_error(sum_s, sum_s2),
            "epsilon_tau": float(standard_error(sum_e, sum_e2)),
            "z_tau": float(standard_error(sum_z, sum_z2)),
        },
        max_bucket_occupancy=max(p[6] for p in parts),
    )


def make_sampler(scores: SoftScoreSet, cache: KvCache, M: int, seed: int) -> SamplerConfig:
    """Sampling distribution p_j proportional to a~_j ||v_j||."""
    if scores.N != cache.N:
        raise DimensionMismatchError(f"{scores.N} scores for {cache.N} keys")
    norms = np.asarray(cache.value_norms, dtype=np.float64)
    mass = np.asarray(scores.a_tilde, dtype=np.float64) * norms
    total = float(np.cumsum(mass)[-1]) if mass.size else 0.0
    if total <= 0:
        raise DomainError("every sampling probability is zero (all values have zero norm)")
    probs = mass / total
    # zero mass, and only zero mass, is never drawn
    if not np.array_equal(probs == 0, mass == 0):
        raise DomainError("sampling probabilities underflowed to zero for keys with positive mass")
    return SamplerConfig(M=M, seed=seed, sampling_probs=probs)


def draw_indices(probs: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF categorical draws over the fixed index order."""
    cdf = np.cumsum(probs)
    u = rng.random(M) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), probs.shape[0] - 1)


def sample_estimator(scores: SoftScoreSet, cache: KvCache, sampler: SamplerConfig) -> np.ndarray:
    """T(q) = (1/M) sum_m (a~_J / p_J) v_J with J ~ p."""
    probs = np.asarray(sampler.sampling_probs, dtype=np.float64)
    if probs.shape[0] != cache.N:
        raise DimensionMismatchError(f"{probs.shape[0]} sampling probabilities for {cache.N} keys")
    if not np.any(probs > 0):
        raise DomainError("every sampling probability is zero")
    rng = spawn_generator(sampler.seed)
    picks = draw_indices(probs, sampler.M, rng)
    ratios = scores.a_tilde[picks] / probs[picks]
    return _weighted_sum(ratios, cache.values[picks]) / sampler.M


def relative_error(estimate, reference) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.linalg.norm(reference)
    diff = np.linalg.norm(np.asarray(estimate, dtype=np.float64) - reference)
    return float(diff / denom) if denom > 0 else float(diff)
