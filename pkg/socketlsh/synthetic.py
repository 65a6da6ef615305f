#!/usr/bin/env python3
# synthetic.py - Standard-Gaussian keys, values and queries

from dataclasses import dataclass

import numpy as np

from socketlsh.errors import ParameterError
from socketlsh.lsh_core import KvCache
from socketlsh.parallel import spawn_generator

def gaussian_arrays(N: int, d: int, seed: int):
    """float32 keys and values, keys drawn first from one generator."""
    if N < 1 or d < 1:
        raise ParameterError(f"N and d must be positive, got N={N}, d={d}")
    rng = spawn_generator(seed)
    keys = rng.standard_normal((N, d)).astype(np.float32)
    values = rng.standard_normal((N, d)).astype(np.float32)
    return keys, values


def gaussian_cache(N: int, d: int, seed: int) -> KvCache:
    keys, values = gaussian_arrays(N, d, seed)
    return KvCache.from_arrays(keys, values)


def gaussian_query(d: int, seed: int) -> np.ndarray:
    return spawn_generator(seed).standard_normal(d)


def gaussian_queries(count: int, d: int, seed: int) -> np.ndarray:
    return spawn_generator(seed).standard_normal((count, d))


@dataclass(frozen=True)
class InstanceConfig:
    """A synthetic (query, cache) pair used by the theory experiments."""

    N: int = 1024
    d: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.d < 1:
            raise ParameterError(f"N and d must be positive, got N={self.N}, d={self.d}")

    def build(self):
        """(q, cache) for this configuration."""
        cache = gaussian_cache(self.N, self.d, self.seed)
        q = gaussian_query(self.d, self.seed + 1)
        return q, cache
