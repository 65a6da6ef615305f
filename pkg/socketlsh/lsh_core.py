#!/usr/bin/env python3
# lsh_core.py - Signed-random-projection hash tables, bucket ids and the KV cache

"""
Signed random projection (SimHash) tables.

Table l holds a P x d Gaussian matrix W; a vector x lands in the bucket whose
id has bit i set iff (W x)_i >= 0. Bit 0 is the first projection row, so the id
is LSB-first and an exact zero projection counts as a positive sign.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from socketlsh.errors import DimensionMismatchError, ParameterError
from socketlsh.parallel import derive_seed_sequence, parallel_map

MAX_HYPERPLANES = 16
BUCKET_DTYPE = np.uint16

# keys per chunk when projecting against all tables at once
_HASH_CHUNK = 8192
# scalars drawn per chunk in collision_probability_mc
_MC_CHUNK_ENTRIES = 1 << 21


@dataclass(frozen=True)
class LshParams:
    """Bucket geometry and seeding of a set of hash tables."""

    P: int
    L: int
    d: int
    seed: int = 0

    def __post_init__(self):
        for name in ("P", "L", "d"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ParameterError(f"{name} must be an integer, got {value!r}")
        if not 1 <= self.P <= MAX_HYPERPLANES:
            raise ParameterError(
                f"P must lie in [1, {MAX_HYPERPLANES}] so bucket ids fit 16 bits, got {self.P}"
            )
        if self.L < 1:
            raise ParameterError(f"L must be a positive integer, got {self.L}")
        if self.d < 1:
            raise ParameterError(f"d must be a positive integer, got {self.d}")

    @property
    def R(self) -> int:
        return 1 << self.P


@dataclass(frozen=True, eq=False)
class HashTableSet:
    params: LshParams
    projections: np.ndarray  # (L, P, d) float64, read-only

    @property
    def P(self) -> int:
        return self.params.P

    @property
    def L(self) -> int:
        return self.params.L

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def R(self) -> int:
        return self.params.R


@dataclass(frozen=True, eq=False)
class BucketAssignment:
    bucket_ids: np.ndarray  # (N, L) uint16
    P: int

    @property
    def N(self) -> int:
        return self.bucket_ids.shape[0]

    @property
    def L(self) -> int:
        return self.bucket_ids.shape[1]


@dataclass(frozen=True, eq=False)
class KvCache:
    """Keys, values, value norms and validity mask of N cached tokens."""

    keys: np.ndarray
    values: np.ndarray
    value_norms: np.ndarray
    mask: np.ndarray = field(default=None)

    @classmethod
    def from_arrays(cls, keys, values, mask=None) -> "KvCache":
        keys = np.asarray(keys)
        values = np.asarray(values)
        if keys.ndim != 2 or values.ndim != 2:
            raise DimensionMismatchError("keys and values must be 2-D (N x d) arrays")
        if keys.shape[0] != values.shape[0]:
            raise DimensionMismatchError(
                f"keys have {keys.shape[0]} rows but values have {values.shape[0]}"
            )
        if mask is None:
            mask = np.ones(keys.shape[0], dtype=bool)
        else:
            mask = np.asarray(mask).astype(bool).reshape(-1)
            if mask.shape[0] != keys.shape[0]:
                raise DimensionMismatchError(
                    f"mask has length {mask.shape[0]}, expected {keys.shape[0]}"
                )
        norms = np.linalg.norm(values.astype(np.float64), axis=1)
        return cls(keys=keys, values=values, value_norms=norms, mask=mask)

    @property
    def N(self) -> int:
        return self.keys.shape[0]

    @property
    def d(self) -> int:
        return self.keys.shape[1]

    def with_mask(self, mask) -> "KvCache":
        return KvCache.from_arrays(self.keys, self.values, mask)


@dataclass(frozen=True)
class CollisionEstimate:
    probability: float
    standard_error: float
    trials: int


def derive_table_seed(seed: int, table: int) -> np.random.SeedSequence:
    """Sub-seed of table `table`: SeedSequence(entropy=seed mod 2^64, spawn_key=(table,))."""
    return derive_seed_sequence(seed, table)


def build_tables(params: LshParams) -> HashTableSet:
    """Sample L independent P x d standard-normal projection matrices.

    Each table draws from its own generator (see `derive_table_seed`) with
    numpy's PCG64 + ziggurat normal sampler, so table l is identical whatever L is.
    """
    projections = np.empty((params.L, params.P, params.d), dtype=np.float64)
    for table in range(params.L):
        rng = np.random.default_rng(derive_table_seed(params.seed, table))
        projections[table] = rng.standard_normal((params.P, params.d))
    projections.setflags(write=False)
    return HashTableSet(params=params, projections=projections)


def _bit_weights(P):
    return (np.uint32(1) << np.arange(P, dtype=np.uint32)).astype(np.uint32)


def encode_signs(projected: np.ndarray) -> np.ndarray:
    """Bucket ids from projections whose last axis has length P."""
    P = projected.shape[-1]
    bits = (projected >= 0).astype(np.uint32)
    return (bits @ _bit_weights(P)).astype(BUCKET_DTYPE)


def bucket_bits(bucket_ids: np.ndarray, P: int) -> np.ndarray:
    """Inverse of `encode_signs`: boolean array with a trailing axis of length P."""
    ids = np.asarray(bucket_ids, dtype=np.uint32)
    return ((ids[..., None] >> np.arange(P, dtype=np.uint32)) & 1).astype(bool)


def _check_dim(tables: HashTableSet, d: int, what: str):
    if d != tables.d:
        raise DimensionMismatchError(f"{what} has dimension {d}, tables expect {tables.d}")


def hash_keys(tables: HashTableSet, cache: KvCache, threads: int = 1) -> BucketAssignment:
    """Bucket id of every key in every table, computed once at prefill."""
    _check_dim(tables, cache.d, "cache")
    keys = np.asarray(cache.keys, dtype=np.float64)
    starts = range(0, cache.N, _HASH_CHUNK)

    def hash_chunk(start):
        block = keys[start:start + _HASH_CHUNK]
        projected = np.einsum("lpd,nd->nlp", tables.projections, block)
        return encode_signs(projected)

    chunks = parallel_map(hash_chunk, starts, threads)
    if chunks:
        ids = np.concatenate(chunks, axis=0)
    else:
        ids = np.empty((0, tables.L), dtype=BUCKET_DTYPE)
    ids.setflags(write=False)
    return BucketAssignment(bucket_ids=ids, P=tables.P)


def hash_query(tables: HashTableSet, q) -> np.ndarray:
    """Hard bucket id of `q` in each of the L tables."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    _check_dim(tables, q.shape[0], "query")
    return encode_signs(tables.projections @ q)


def bucket_occupancy(assignment: BucketAssignment) -> np.ndarray:
    """L x R matrix of key counts per bucket."""
    R = 1 << assignment.P
    counts = np.zeros((assignment.L, R), dtype=np.int64)
    for table in range(assignment.L):
        counts[table] = np.bincount(assignment.bucket_ids[:, table], minlength=R)
    return counts


def max_bucket_occupancy(assignment: BucketAssignment) -> int:
    if assignment.N == 0:
        return 0
    return int(bucket_occupancy(assignment).max())


def memory_bits_per_token(params: LshParams) -> int:
    """Index bits stored per token: one u16 id per table plus a float32 value norm."""
    return 16 * params.L + 32


def oracle_collision_probability(q, k, P: int) -> float:
    """Closed-form SRP collision probability (1 - angle/pi)^P."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    k = np.asarray(k, dtype=np.float64).reshape(-1)
    cosine = float(q @ k) / (np.linalg.norm(q) * np.linalg.norm(k))
    cosine = min(1.0, max(-1.0, cosine))
    return (1.0 - math.acos(cosine) / math.pi) ** P


def collision_probability_mc(q, k, P: int, trials: int, seed: int,
                             rng: Optional[np.random.Generator] = None) -> CollisionEstimate:
    """
    Brute-force collision frequency of q and k over `trials` fresh single tables.

    Args:
        q, k: vectors of equal dimension
        P: hyperplanes per table
        trials: number of independent tables
        seed: master seed (ignored when `rng` is given)

    Returns:
        CollisionEstimate with p_hat and sqrt(p_hat (1 - p_hat) / trials)
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    if not 1 <= P <= MAX_HYPERPLANES:
        raise ParameterError(f"P must lie in [1, {MAX_HYPERPLANES}], got {P}")
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    k = np.asarray(k, dtype=np.float64).reshape(-1)
    if q.shape != k.shape:
        raise DimensionMismatchError(f"q has dimension {q.shape[0]}, k has {k.shape[0]}")

    rng = rng if rng is not None else np.random.default_rng(derive_seed_sequence(seed))
    d = q.shape[0]
    chunk = max(1, _MC_CHUNK_ENTRIES // (P * d))
    pair = np.stack([q, k], axis=1)  # (d, 2)

    collisions = 0
    remaining = trials
    while remaining > 0:
        n = min(chunk, remaining)
        planes = rng.standard_normal((n, P, d))
        signs = (planes @ pair) >= 0  # (n, P, 2)
        collisions += int(np.all(signs[..., 0] == signs[..., 1], axis=1).sum())
        remaining -= n

    p_hat = collisions / trials
    return CollisionEstimate(
        probability=p_hat,
        standard_error=math.sqrt(p_hat * (1.0 - p_hat) / trials),
        trials=trials,
    )
