#!/usr/bin/env python3
# linalg.py - Spectral norm by power iteration, orthonormal rows, log-log slope fits

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from socketlsh.errors import ParameterError
from socketlsh.parallel import spawn_generator

# spawn-key prefix of the bootstrap resampling stream
_BOOTSTRAP_STREAM = 0x626F6F74


def spectral_norm(matrix, tol: float = 1e-6, max_iter: int = 100000, seed: int = 0) -> float:
    """
    Largest singular value of `matrix` by power iteration on its Gram matrix.

    Iterates until the Rayleigh quotient changes by less than tol * 1e-3
    relative, which leaves the singular value well inside `tol`.
    """
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2:
        raise ParameterError("spectral_norm expects a 2-D matrix")
    if A.size == 0:
        return 0.0
    gram = A.T @ A if A.shape[1] <= A.shape[0] else A @ A.T
    n = gram.shape[0]

    rng = spawn_generator(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)

    lam = 0.0
    for _ in range(max_iter):
        y = gram @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0:
            # x fell in the null space
            x = rng.standard_normal(n)
            x /= np.linalg.norm(x)
            continue
        lam_new = float(x @ y)
        x = y / y_norm
        if lam_new > 0 and abs(lam_new - lam) <= tol * 1e-3 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def orthonormal_rows(rows) -> np.ndarray:
    """Gram-Schmidt (modified, with one re-orthogonalization pass) over the rows."""
    G = np.array(rows, dtype=np.float64)
    P, d = G.shape
    if P > d:
        raise ParameterError(f"cannot orthonormalize {P} rows in dimension {d}")
    Q = np.zeros_like(G)
    for i in range(P):
        v = G[i].copy()
        for _ in range(2):
            for j in range(i):
                v -= (Q[j] @ v) * Q[j]
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ParameterError("rows are linearly dependent")
        Q[i] = v / norm
    return Q


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float

    def intersects(self, low: float, high: float) -> bool:
        return self.ci_high >= low and self.ci_low <= high


def _slope(log_x, log_y):
    slope, intercept = np.polyfit(log_x, log_y, 1)
    return float(slope), float(intercept)


def fit_loglog_slope(xs: Sequence[float], errors_by_x: Sequence[Sequence[float]],
                     seed: int = 0, resamples: int = 1000) -> SlopeFit:
    """
    Least-squares slope of log(mean error) against log(x).

    The 95% interval comes from resampling the replicas at every x with
    replacement and refitting.
    """
    if len(xs) != len(errors_by_x):
        raise ParameterError("one list of replica errors is needed per sweep point")
    if len(xs) < 2:
        raise ParameterError("a slope needs at least two sweep points")
    log_x = np.log(np.asarray(xs, dtype=np.float64))
    samples = [np.asarray(e, dtype=np.float64) for e in errors_by_x]
    means = np.array([s.mean() for s in samples])
    slope, intercept = _slope(log_x, np.log(means))

    rng = spawn_generator(seed, _BOOTSTRAP_STREAM)
    boot = np.empty(resamples)
    for b in range(resamples):
        resampled = [s[rng.integers(0, s.shape[0], s.shape[0])].mean() for s in samples]
        boot[b] = _slope(log_x, np.log(resampled))[0]
    low, high = np.percentile(boot, [2.5, 97.5])
    return SlopeFit(slope=slope, intercept=intercept, ci_low=float(low), ci_high=float(high))
