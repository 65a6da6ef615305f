#!/usr/bin/env python3
# soft_scoring.py - Soft bucket distributions and soft/hard collision scores

"""
Soft collision scoring.

For table l the query is squashed to u = tanh(W q) / sqrt(d) and bucket r gets
softmax_r(u . c_r / tau) over the hypercube corners c_r in {-1, +1}^P. The
logits are linear in the corner coordinates, so the softmax factorizes:

    p(r | q) = prod_i sigmoid(2 u_i c_{r,i} / tau)

which is how every hot-path lookup is evaluated (O(P) per key and table, no
overflow). The corner enumeration is kept as `soft_bucket_probs_bruteforce`.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_expit, logsumexp

from socketlsh.errors import DimensionMismatchError, ParameterError
from socketlsh.lsh_core import (MAX_HYPERPLANES, BucketAssignment, HashTableSet,
                                KvCache, bucket_bits, hash_query)

_SCORE_CHUNK = 4096


@dataclass(frozen=True)
class SoftHashConfig:
    tau: float = 0.5
    # None means 1/sqrt(d) of the tables it is applied to
    scale: Optional[float] = None

    def __post_init__(self):
        try:
            tau = float(self.tau)
        except (TypeError, ValueError):
            raise ParameterError(f"tau must be a real number, got {self.tau!r}")
        if not math.isfinite(tau) or tau <= 0:
            raise ParameterError(f"tau must be a positive finite real, got {self.tau!r}")
        object.__setattr__(self, "tau", tau)
        if self.scale is not None:
            try:
                scale = float(self.scale)
            except (TypeError, ValueError):
                raise ParameterError(f"scale must be a real number, got {self.scale!r}")
            if not scale > 0:
                raise ParameterError(f"scale must be positive, got {self.scale!r}")
            object.__setattr__(self, "scale", scale)

    def scale_for(self, d: int) -> float:
        return self.scale if self.scale is not None else 1.0 / math.sqrt(d)


@dataclass(frozen=True, eq=False)
class SoftBucketDistribution:
    """Per-table soft bucket distribution of one query."""

    squashed_query: np.ndarray  # (L, P) u^(l)(q)
    tau: float

    @property
    def L(self) -> int:
        return self.squashed_query.shape[0]

    @property
    def P(self) -> int:
        return self.squashed_query.shape[1]

    @property
    def R(self) -> int:
        return 1 << self.P

    def log_factors(self):
        """Per-coordinate log-probabilities of the +1 and -1 corner sides, each (L, P)."""
        logits = 2.0 * self.squashed_query / self.tau
        return log_expit(logits), log_expit(-logits)

    @property
    def probs(self) -> np.ndarray:
        """Materialized (L, R) table; only sensible for moderate P."""
        ids = np.arange(self.R, dtype=np.uint32)
        log_plus, log_minus = self.log_factors()
        bits = bucket_bits(ids, self.P).astype(np.float64)  # (R, P)
        log_p = bits @ log_plus.T + (1.0 - bits) @ log_minus.T  # (R, L)
        return np.exp(log_p.T)

    def hard_buckets(self) -> np.ndarray:
        """Row argmax; equals the hard query bucket under the sign-of-zero rule."""
        bits = (self.squashed_query >= 0).astype(np.uint32)
        weights = np.uint32(1) << np.arange(self.P, dtype=np.uint32)
        return (bits @ weights).astype(np.uint16)

    def hard_bucket_mass(self) -> np.ndarray:
        """p(b_q | q) per table: prod_i sigmoid(2|u_i|/tau)."""
        return np.exp(log_expit(2.0 * np.abs(self.squashed_query) / self.tau).sum(axis=-1))


@dataclass(frozen=True, eq=False)
class SoftScoreSet:
    w_hat: np.ndarray    # (N,) float32, sum over tables
    w_tilde: np.ndarray  # (N,) float64, w_hat / L
    z_tilde: float
    a_tilde: np.ndarray  # (N,) float64
    L: int

    @property
    def N(self) -> int:
        return self.w_hat.shape[0]


@dataclass(frozen=True, eq=False)
class ValueScores:
    """Value-aware ranking scores; masked keys are never selectable."""

    scores: np.ndarray      # (N,) float64, -inf where not selectable
    selectable: np.ndarray  # (N,) bool


def squash_query(projections: np.ndarray, q: np.ndarray, scale: float) -> np.ndarray:
    return scale * np.tanh(projections @ q)


def soft_bucket_probs(tables: HashTableSet, q, cfg: SoftHashConfig) -> SoftBucketDistribution:
    """Soft bucket distribution of `q` in every table."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != tables.d:
        raise DimensionMismatchError(f"query has dimension {q.shape[0]}, tables expect {tables.d}")
    u = squash_query(tables.projections, q, cfg.scale_for(tables.d))
    return SoftBucketDistribution(squashed_query=u, tau=float(cfg.tau))


def corner_matrix(P: int) -> np.ndarray:
    """(R, P) matrix of corners c_r in {-1, +1}^P, bit i of r -> coordinate i."""
    if not 1 <= P <= MAX_HYPERPLANES:
        raise ParameterError(f"P must lie in [1, {MAX_HYPERPLANES}], got {P}")
    bits = bucket_bits(np.arange(1 << P, dtype=np.uint32), P)
    return np.where(bits, 1.0, -1.0)


def soft_bucket_probs_bruteforce(tables: HashTableSet, q, cfg: SoftHashConfig) -> np.ndarray:
    """(L, R) softmax over all 2^P corners, max-subtracted, double precision."""
    dist = soft_bucket_probs(tables, q, cfg)
    corners = corner_matrix(tables.P)
    logits = dist.squashed_query @ corners.T / dist.tau  # (L, R)
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def hard_score(query_buckets, assignment: BucketAssignment) -> np.ndarray:
    """Number of tables in which each key shares the query's bucket."""
    query_buckets = np.asarray(query_buckets).reshape(-1)
    if query_buckets.shape[0] != assignment.L:
        raise DimensionMismatchError(
            f"query has ids for {query_buckets.shape[0]} tables, assignment has {assignment.L}"
        )
    matches = assignment.bucket_ids == query_buckets.astype(assignment.bucket_ids.dtype)
    return matches.sum(axis=1).astype(np.int32)


def _per_key_table_probs(dist: SoftBucketDistribution, bucket_ids: np.ndarray) -> np.ndarray:
    """(N, L) soft scores s_j^(l), evaluated factor by factor in chunks of keys."""
    log_plus, log_minus = dist.log_factors()
    base = log_minus.sum(axis=1)    # all bits clear
    delta = log_plus - log_minus    # gain per set bit
    out = np.empty(bucket_ids.shape, dtype=np.float64)
    for start in range(0, bucket_ids.shape[0], _SCORE_CHUNK):
        bits = bucket_bits(bucket_ids[start:start + _SCORE_CHUNK], dist.P)
        log_p = np.einsum("nlp,lp->nl", bits.astype(np.float64), delta) + base
        out[start:start + _SCORE_CHUNK] = np.exp(log_p)
    return out


def per_table_scores(dist: SoftBucketDistribution, assignment: BucketAssignment) -> np.ndarray:
    if dist.L != assignment.L:
        raise DimensionMismatchError(
            f"distribution covers {dist.L} tables, assignment has {assignment.L}"
        )
    return _per_key_table_probs(dist, assignment.bucket_ids)


def soft_score(dist: SoftBucketDistribution, assignment: BucketAssignment) -> SoftScoreSet:
    """Soft collision scores w_hat and their normalized forms."""
    table_scores = per_table_scores(dist, assignment)
    w_hat = table_scores.sum(axis=1).astype(np.float32)
    w_tilde = w_hat.astype(np.float64) / assignment.L
    # sequential reduction so Z~ never depends on how keys were scored
    z_tilde = float(np.cumsum(w_tilde)[-1]) if w_tilde.size else 0.0
    assert w_tilde.size == 0 or z_tilde > 0.0, "soft scores are strictly positive for tau > 0"
    a_tilde = w_tilde / z_tilde if z_tilde > 0 else np.zeros_like(w_tilde)
    return SoftScoreSet(w_hat=w_hat, w_tilde=w_tilde, z_tilde=z_tilde, a_tilde=a_tilde,
                        L=assignment.L)


def masked_value_scores(scores, cache: KvCache) -> ValueScores:
    """
    Value-aware scores w_hat_j * ||v_j|| with masked keys flagged unselectable.

    Args:
        scores: a SoftScoreSet, or any length-N array of per-key collision scores
        cache: the KV cache providing value norms and the mask
    """
    raw = scores.w_hat if isinstance(scores, SoftScoreSet) else np.asarray(scores)
    raw = raw.astype(np.float64).reshape(-1)
    if raw.shape[0] != cache.N:
        raise DimensionMismatchError(f"got {raw.shape[0]} scores for {cache.N} keys")
    selectable = np.asarray(cache.mask, dtype=bool).copy()
    values = np.where(selectable, raw * cache.value_norms, -np.inf)
    return ValueScores(scores=values, selectable=selectable)


def table_soft_scores(projection: np.ndarray, q, keys, cfg: SoftHashConfig):
    """
    Soft scores of all keys in a single table.

    Args:
        projection: (P, d) matrix, or a (T, P, d) stack of tables
        q: query vector
        keys: (N, d) keys

    Returns:
        (scores, hard_mass, key_ids, query_ids): scores is (..., N), hard_mass the
        probability the query puts on its own hard bucket, and the hard ids of the
        keys (..., N) and of the query (...,).
    """
    projection = np.asarray(projection, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    keys = np.asarray(keys, dtype=np.float64)
    d = q.shape[0]
    u = squash_query(projection, q, cfg.scale_for(d))  # (..., P)
    logits = 2.0 * u / cfg.tau
    log_plus, log_minus = log_expit(logits), log_expit(-logits)

    key_proj = np.einsum("...pd,nd->...np", projection, keys)
    key_bits = key_proj >= 0
    query_bits = u >= 0
    log_p = np.where(key_bits, log_plus[..., None, :], log_minus[..., None, :]).sum(axis=-1)
    scores = np.exp(log_p)
    hard_mass = np.exp(log_expit(np.abs(logits)).sum(axis=-1))

    weights = np.uint32(1) << np.arange(u.shape[-1], dtype=np.uint32)
    key_ids = key_bits.astype(np.uint32) @ weights
    query_ids = query_bits.astype(np.uint32) @ weights
    return scores, hard_mass, key_ids, query_ids
