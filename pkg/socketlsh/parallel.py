#!/usr/bin/env python3
# parallel.py - Order-preserving worker pool and seed derivation

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

SEED_MASK = (1 << 64) - 1


def derive_seed_sequence(master: int, *path: int) -> np.random.SeedSequence:
    """SeedSequence for the replica at `path` under `master`.

    The master seed is reduced to 64 bits; `path` is the spawn key, so adding
    replicas (or tables) never changes the streams of existing ones.
    """
    return np.random.SeedSequence(
        entropy=int(master) & SEED_MASK, spawn_key=tuple(int(p) for p in path)
    )


def spawn_generator(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(master, *path))


def derive_seed(master: int, *path: int) -> int:
    """64-bit integer seed for the replica at `path`."""
    state = derive_seed_sequence(master, *path).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Apply `fn` to every item; results come back in input order."""
    items: Sequence[T] = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
