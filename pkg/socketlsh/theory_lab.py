#!/usr/bin/env python3
# theory_lab.py - Empirical checks of the soft-count attention error decomposition

"""
Measured counterparts of the error decomposition

    ||T - y*|| <= ||T - y_{tau,L}|| + ||y_{tau,L} - y_tau|| + ||y_tau - y*||

(sampling, finite tables, soft bucketization). Constants the analysis only
assumes (B, Z_min, Z_tau,min) are measured per instance instead.
"""

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from socketlsh.attention import (SamplerConfig, angular_attention, finite_table_output,
                                 make_sampler, population_estimate, sample_estimator)
from socketlsh.errors import ParameterError
from socketlsh.error_logger import log_event
from socketlsh.linalg import SlopeFit, fit_loglog_slope, orthonormal_rows, spectral_norm
from socketlsh.lsh_core import (LshParams, build_tables, hash_keys, max_bucket_occupancy,
                                oracle_collision_probability)
from socketlsh.parallel import derive_seed, parallel_map, spawn_generator
from socketlsh.soft_scoring import (SoftHashConfig, soft_bucket_probs, soft_score,
                                    table_soft_scores)
from socketlsh.synthetic import InstanceConfig

SLOPE_WINDOW = (-0.7, -0.3)
CORRELATION_C = math.sqrt(2.0 / math.pi)
# M = 8 to M = 4096 must cut the mean sampling error tenfold
DECAY_SPAN = 512.0
DECAY_OVER_SPAN = 10.0
# tau at which epsilon_tau must sit near its uniform limit 1 - 1/R
HOT_TAU = 100.0
UNIFORM_LIMIT_TOL = 1e-2

# seed streams under the master seed
_TABLES, _POPULATION, _SAMPLES, _CORRELATION, _VARIANCE = range(5)

_CORRELATION_CHUNK = 8192
_CORRELATION_BATCHES = 20


@dataclass
class SweepResult:
    swept_param: str
    value: float
    replica: int
    error_l2: float
    target_kind: str
    v_spectral_norm: float
    realized_Z: float
    realized_Z_tau: float
    realized_B: int
    seed: int
    wall_time: float
    extra: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, Any]:
        row = asdict(self)
        extra = row.pop("extra")
        row.update(extra)
        return row


@dataclass
class SweepOutcome:
    results: List[SweepResult]
    slope: Optional[SlopeFit] = None
    checks: Dict[str, bool] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)


@dataclass
class CorrelationExperiment:
    gamma_hard: float
    gamma_soft: float
    gamma_hard_predicted: float
    gamma_soft_predicted: float
    se_hard: float
    se_soft: float
    se_difference: float
    mc_pairs: int
    P: int
    d: int
    orthonormal: bool = True

    def checks(self) -> Dict[str, bool]:
        return {
            "gamma_hard_matches_closed_form":
                abs(self.gamma_hard - self.gamma_hard_predicted) <= 3 * self.se_hard,
            "gamma_soft_matches_closed_form":
                abs(self.gamma_soft - self.gamma_soft_predicted) <= 3 * self.se_soft,
            "gamma_hard_le_gamma_soft":
                self.gamma_hard <= self.gamma_soft + 3 * self.se_difference,
            "gamma_within_unit_range":
                abs(self.gamma_hard) <= 1 + 3 * self.se_hard
                and abs(self.gamma_soft) <= 1 + 3 * self.se_soft,
        }


@dataclass
class VarianceCheck:
    soft_mean: float
    soft_variance: float
    soft_variance_se: float
    hard_mean: float
    hard_variance: float
    hard_expected: float
    tables: int

    @property
    def soft_bound(self) -> float:
        return self.soft_mean * (1.0 - self.soft_mean)

    @property
    def hard_bound(self) -> float:
        return self.hard_expected * (1.0 - self.hard_expected)

    @property
    def hard_variance_se(self) -> float:
        # SE of the unbiased variance of a Bernoulli(p) sample
        p = self.hard_expected
        return abs(1.0 - 2.0 * p) * math.sqrt(p * (1.0 - p) / self.tables)

    def checks(self) -> Dict[str, bool]:
        # first-order SE vanishes at p = 1/2; the second-order term stays
        hard_slack = 3.0 * self.hard_variance_se + 9.0 * self.hard_bound / self.tables
        return {
            "soft_variance_below_bernoulli": self.soft_variance <= self.soft_bound + 3 * self.soft_variance_se,
            "soft_variance_strictly_below_bernoulli": self.soft_variance < self.soft_bound,
            "hard_variance_matches_bernoulli":
                abs(self.hard_variance - self.hard_bound) <= hard_slack,
        }


@dataclass
class TriangleReport:
    total: float
    sampling_term: float
    table_term: float
    bias_term: float
    epsilon_tau: float
    L: int
    M: int
    tau: float

    @property
    def holds(self) -> bool:
        terms = self.sampling_term + self.table_term + self.bias_term
        return self.total <= terms * (1.0 + 1e-12) + 1e-15


def _check_grid(name, values, minimum_points=4, integer=True):
    values = list(values)
    if len(values) < minimum_points:
        raise ParameterError(f"{name} grid needs at least {minimum_points} points, got {len(values)}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ParameterError(f"{name} grid must be strictly increasing: {values}")
    if values[0] <= 0 or (integer and any(int(v) != v for v in values)):
        raise ParameterError(f"{name} grid must hold positive{' integers' if integer else ' values'}")
    return values


def _violation_limit(rate_target: float, trials: int) -> float:
    return rate_target + 3.0 * math.sqrt(rate_target * (1.0 - rate_target) / trials)


def _required_decay(M_values) -> float:
    """Ratio means[0]/means[-1] must reach: 10 over 8..4096, sqrt-scaled on shorter spans."""
    span = M_values[-1] / M_values[0]
    return DECAY_OVER_SPAN * math.sqrt(min(span, DECAY_SPAN) / DECAY_SPAN)


def table_precondition(B: int, Z_tau: float, delta: float = 0.1) -> float:
    """Smallest L satisfying L >= 2 B^2 log(8/delta) / Z_tau^2."""
    return 2.0 * B ** 2 * math.log(8.0 / delta) / Z_tau ** 2


def bias_bound(B: int, Z: float, Z_tau: float, epsilon_tau: float, v_norm: float) -> float:
    """2B (1/Z_tau + sqrt(B)/(Z Z_tau)) epsilon_tau ||V||_2 with measured constants."""
    return 2.0 * B * (1.0 / Z_tau + math.sqrt(B) / (Z * Z_tau)) * epsilon_tau * v_norm


def sweep_L(instance: InstanceConfig, L_values: Sequence[int], replicas: int,
            P: int = 8, tau: float = 0.5, mc_tables: int = 10000, seed: int = 0,
            delta: float = 0.1, threads: int = 1) -> SweepOutcome:
    """
    Finite-table error ||y_{tau,L} - y_tau|| across table counts.

    y_tau is one population estimate shared by every sweep point; each
    (L, replica) pair hashes with freshly seeded tables.
    """
    L_values = _check_grid("L", L_values)
    if replicas < 2:
        raise ParameterError(f"replicas must be >= 2, got {replicas}")
    cfg = SoftHashConfig(tau=tau)
    q, cache = instance.build()
    population = population_estimate(q, cache, cfg, P, mc_tables,
                                     derive_seed(seed, _POPULATION), threads)
    target = angular_attention(q, cache, P)
    v_norm = spectral_norm(cache.values)
    log_event("sweep_l_population_ready", z_tau=population.z_tau,
              epsilon_tau=population.epsilon_tau)

    def run(task):
        L, replica = task
        started = time.perf_counter()
        table_seed = derive_seed(seed, _TABLES, L, replica)
        tables = build_tables(LshParams(P=P, L=L, d=cache.d, seed=table_seed))
        assignment = hash_keys(tables, cache)
        scores = soft_score(soft_bucket_probs(tables, q, cfg), assignment)
        y_tl = finite_table_output(scores, cache)
        B = max_bucket_occupancy(assignment)
        z_gap = abs(scores.z_tilde - population.z_tau)
        z_bound = B * math.sqrt(math.log(4.0 / delta) / (2.0 * L))
        return SweepResult(
            swept_param="L", value=L, replica=replica,
            error_l2=float(np.linalg.norm(y_tl - population.output)),
            target_kind="y_tau", v_spectral_norm=v_norm,
            realized_Z=target.normalizer, realized_Z_tau=population.z_tau,
            realized_B=B, seed=table_seed, wall_time=time.perf_counter() - started,
            extra={"z_tilde": scores.z_tilde, "z_gap": z_gap, "z_bound": z_bound},
        )

    tasks = [(L, r) for L in L_values for r in range(replicas)]
    results = parallel_map(run, tasks, threads)
    errors = [[r.error_l2 for r in results if r.value == L] for L in L_values]
    slope = fit_loglog_slope(L_values, errors, seed)

    z_violations = sum(r.extra["z_gap"] > r.extra["z_bound"] for r in results)
    z_rate = z_violations / len(results)
    w_se = np.asarray(population.standard_errors["w_tau"])
    population_error = v_norm * float(np.linalg.norm(w_se)) / population.z_tau
    smallest = min(float(np.mean(e)) for e in errors)
    outcome = SweepOutcome(results=results, slope=slope)
    outcome.checks = {
        "slope_in_window": slope.intersects(*SLOPE_WINDOW),
        "z_tilde_concentration": z_rate <= _violation_limit(delta, len(results)),
        "replicas_vary": all(np.std(e) > 0 for e in errors),
    }
    outcome.summary = {
        "slope": slope.slope, "slope_ci": [slope.ci_low, slope.ci_high],
        "mean_errors": {int(L): float(np.mean(e)) for L, e in zip(L_values, errors)},
        "z_tilde_violation_rate": z_rate,
        "epsilon_tau": population.epsilon_tau,
        "population_error_proxy": population_error,
        "population_error_ratio": population_error / smallest if smallest > 0 else float("inf"),
        "table_precondition_L": table_precondition(max(r.realized_B for r in results),
                                                   population.z_tau, delta),
    }
    return outcome


def sweep_M(instance: InstanceConfig, M_values: Sequence[int], replicas: int,
            P: int = 8, L: int = 60, tau: float = 0.5, seed: int = 0,
            delta: float = 0.1, threads: int = 1) -> SweepOutcome:
    """Sampling error ||T - y_{tau,L}|| across sample counts, tables frozen."""
    M_values = _check_grid("M", M_values)
    if replicas < 2:
        raise ParameterError(f"replicas must be >= 2, got {replicas}")
    cfg = SoftHashConfig(tau=tau)
    q, cache = instance.build()
    table_seed = derive_seed(seed, _TABLES)
    tables = build_tables(LshParams(P=P, L=L, d=cache.d, seed=table_seed))
    assignment = hash_keys(tables, cache)
    scores = soft_score(soft_bucket_probs(tables, q, cfg), assignment)
    y_tl = finite_table_output(scores, cache)
    probs = make_sampler(scores, cache, 1, 0).sampling_probs
    v_norm = spectral_norm(cache.values)
    target = angular_attention(q, cache, P)
    B = max_bucket_occupancy(assignment)

    def run(task):
        M, replica = task
        started = time.perf_counter()
        sample_seed = derive_seed(seed, _SAMPLES, M, replica)
        T = sample_estimator(scores, cache, SamplerConfig(M=M, seed=sample_seed,
                                                          sampling_probs=probs))
        error = float(np.linalg.norm(T - y_tl))
        bound = v_norm * math.sqrt(8.0 * math.log(2.0 / delta) / M)
        return SweepResult(
            swept_param="M", value=M, replica=replica, error_l2=error,
            target_kind="y_tau_L", v_spectral_norm=v_norm,
            realized_Z=target.normalizer, realized_Z_tau=float("nan"),
            realized_B=B, seed=sample_seed, wall_time=time.perf_counter() - started,
            extra={"bound": bound, "bound_violated": float(error > bound)},
        )

    tasks = [(M, r) for M in M_values for r in range(replicas)]
    results = parallel_map(run, tasks, threads)
    errors = [[r.error_l2 for r in results if r.value == M] for M in M_values]
    slope = fit_loglog_slope(M_values, errors, seed)

    means = [float(np.mean(e)) for e in errors]
    violation_rate = sum(r.extra["bound_violated"] for r in results) / len(results)
    required_decay = _required_decay(M_values)
    outcome = SweepOutcome(results=results, slope=slope)
    outcome.checks = {
        "slope_in_window": slope.intersects(*SLOPE_WINDOW),
        "tail_bound_rate": violation_rate <= _violation_limit(delta, len(results)),
        "error_decays": means[-1] <= means[0] / required_decay,
    }
    outcome.summary = {
        "slope": slope.slope, "slope_ci": [slope.ci_low, slope.ci_high],
        "mean_errors": {int(M): m for M, m in zip(M_values, means)},
        "bound_violation_rate": violation_rate,
        "decay_ratio": means[0] / means[-1] if means[-1] > 0 else float("inf"),
        "required_decay": required_decay,
    }
    return outcome


def sweep_tau(instance: InstanceConfig, tau_values: Sequence[float], mc_tables: int = 10000,
              P: int = 8, seed: int = 0, delta: float = 0.1, threads: int = 1) -> SweepOutcome:
    """
    Soft-bucketization bias ||y_tau - y*|| and epsilon_tau across temperatures.

    Every temperature reuses the same population tables, so epsilon_tau is
    compared on common random numbers.
    """
    tau_values = _check_grid("tau", tau_values, minimum_points=2, integer=False)
    if tau_values[-1] / tau_values[0] < 100:
        raise ParameterError("tau grid must span at least two decades")
    q, cache = instance.build()
    target = angular_attention(q, cache, P)
    v_norm = spectral_norm(cache.values)
    population_seed = derive_seed(seed, _POPULATION)

    results = []
    for tau in tau_values:
        started = time.perf_counter()
        population = population_estimate(q, cache, SoftHashConfig(tau=tau), P, mc_tables,
                                         population_seed, threads)
        error = float(np.linalg.norm(population.output - target.output))
        B = population.max_bucket_occupancy
        rhs = bias_bound(B, target.normalizer, population.z_tau, population.epsilon_tau, v_norm)
        results.append(SweepResult(
            swept_param="tau", value=tau, replica=0, error_l2=error, target_kind="y*",
            v_spectral_norm=v_norm, realized_Z=target.normalizer,
            realized_Z_tau=population.z_tau, realized_B=B, seed=population_seed,
            wall_time=time.perf_counter() - started,
            extra={
                "epsilon_tau": population.epsilon_tau,
                "epsilon_tau_se": population.standard_errors["epsilon_tau"],
                "bias_bound": rhs,
                "bound_holds": float(error <= rhs),
                "table_precondition_L": table_precondition(B, population.z_tau, delta),
            },
        ))
        log_event("sweep_tau_point", tau=tau, epsilon_tau=population.epsilon_tau, error=error)

    monotone = True
    for prev, cur in zip(results, results[1:]):
        slack = 3.0 * math.hypot(prev.extra["epsilon_tau_se"], cur.extra["epsilon_tau_se"])
        monotone &= cur.extra["epsilon_tau"] >= prev.extra["epsilon_tau"] - slack
    uniform_limit = 1.0 - 1.0 / (1 << P)
    outcome = SweepOutcome(results=results)
    outcome.checks = {
        "bias_bound_holds": all(r.extra["bound_holds"] == 1.0 for r in results),
        "epsilon_monotone_in_tau": bool(monotone),
    }
    hottest = results[-1]
    if hottest.value >= HOT_TAU:
        outcome.checks["uniform_limit_at_hot_tau"] = (
            abs(hottest.extra["epsilon_tau"] - uniform_limit) <= UNIFORM_LIMIT_TOL)
    outcome.summary = {
        "epsilon_tau": {float(r.value): r.extra["epsilon_tau"] for r in results},
        "uniform_limit": uniform_limit,
    }
    return outcome


def correlation_experiment(P: int, d: int, mc_pairs: int, seed: int = 0,
                           orthonormal: bool = True, q=None) -> CorrelationExperiment:
    """
    Correlation of q.k with the single-table aggregated hard and soft scores.

    Rows are exactly orthonormalized unless `orthonormal` is False, in which
    case they are only normalized (the report-only configuration).
    """
    if P > d:
        raise ParameterError(f"P = {P} planes cannot be orthonormal in dimension d = {d}")
    if mc_pairs < 2 * _CORRELATION_BATCHES:
        raise ParameterError(f"mc_pairs must be >= {2 * _CORRELATION_BATCHES}")
    rng = spawn_generator(seed, _CORRELATION)
    if q is None:
        q = rng.standard_normal(d)
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    planes = rng.standard_normal((P, d))
    if orthonormal:
        planes = orthonormal_rows(planes)
    else:
        planes = planes / np.linalg.norm(planes, axis=1, keepdims=True)

    projected = planes @ q
    s_hard = np.where(projected >= 0, 1.0, -1.0)
    s_soft = np.tanh(projected)

    # batch-means: each batch gives its own correlation estimate
    batch_size = mc_pairs // _CORRELATION_BATCHES
    hard_corr, soft_corr = [], []
    for batch in range(_CORRELATION_BATCHES):
        size = batch_size if batch < _CORRELATION_BATCHES - 1 else mc_pairs - batch_size * batch
        sums = np.zeros(8)
        remaining = size
        while remaining > 0:
            n = min(_CORRELATION_CHUNK, remaining)
            keys = rng.standard_normal((n, d))
            x = keys @ q
            signs = np.where(keys @ planes.T >= 0, 1.0, -1.0)
            y_hard = signs @ s_hard
            y_soft = signs @ s_soft
            sums += [x.sum(), (x * x).sum(), y_hard.sum(), (y_hard ** 2).sum(),
                     (x * y_hard).sum(), y_soft.sum(), (y_soft ** 2).sum(), (x * y_soft).sum()]
            remaining -= n
        hard_corr.append(_pearson(size, sums[0], sums[1], sums[2], sums[3], sums[4]))
        soft_corr.append(_pearson(size, sums[0], sums[1], sums[5], sums[6], sums[7]))

    hard_corr = np.array(hard_corr)
    soft_corr = np.array(soft_corr)
    root = math.sqrt(_CORRELATION_BATCHES)
    return CorrelationExperiment(
        gamma_hard=float(hard_corr.mean()),
        gamma_soft=float(soft_corr.mean()),
        gamma_hard_predicted=CORRELATION_C / math.sqrt(P) * float(np.abs(projected).sum()),
        gamma_soft_predicted=CORRELATION_C * float(projected @ s_soft) / float(np.linalg.norm(s_soft)),
        se_hard=float(hard_corr.std(ddof=1) / root),
        se_soft=float(soft_corr.std(ddof=1) / root),
        se_difference=float((soft_corr - hard_corr).std(ddof=1) / root),
        mc_pairs=mc_pairs, P=P, d=d, orthonormal=orthonormal,
    )


def _pearson(n, sx, sxx, sy, syy, sxy) -> float:
    cov = sxy / n - (sx / n) * (sy / n)
    var_x = sxx / n - (sx / n) ** 2
    var_y = syy / n - (sy / n) ** 2
    return cov / math.sqrt(var_x * var_y)


def variance_extremality(q, k, P: int, tau: float, tables: int, seed: int = 0) -> VarianceCheck:
    """Per-table soft score vs hard collision indicator of one (q, k) pair over fresh tables."""
    if tables < 2:
        raise ParameterError(f"tables must be >= 2, got {tables}")
    cfg = SoftHashConfig(tau=tau)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    key = np.asarray(k, dtype=np.float64).reshape(1, -1)
    rng = spawn_generator(seed, _VARIANCE)
    soft = np.empty(tables)
    hard = np.empty(tables)
    batch = 1024
    for start in range(0, tables, batch):
        n = min(batch, tables - start)
        planes = rng.standard_normal((n, P, q.shape[0]))
        scores, _, key_ids, query_ids = table_soft_scores(planes, q, key, cfg)
        soft[start:start + n] = scores[:, 0]
        hard[start:start + n] = key_ids[:, 0] == query_ids
    soft_mean = float(soft.mean())
    centered = soft - soft_mean
    soft_var = float((centered ** 2).mean())
    fourth = float((centered ** 4).mean())
    hard_mean = float(hard.mean())
    return VarianceCheck(
        soft_mean=soft_mean,
        soft_variance=soft_var,
        soft_variance_se=math.sqrt(max(fourth - soft_var ** 2, 0.0) / tables),
        hard_mean=hard_mean,
        hard_variance=float(hard.var(ddof=1)),
        hard_expected=oracle_collision_probability(q, key, P),
        tables=tables,
    )


def triangle_report(instance: InstanceConfig, L: int, M: int, tau: float, P: int = 8,
                    mc_tables: int = 10000, seed: int = 0, threads: int = 1) -> TriangleReport:
    """Total error of T(q) against y* next to its three triangle terms."""
    cfg = SoftHashConfig(tau=tau)
    q, cache = instance.build()
    tables = build_tables(LshParams(P=P, L=L, d=cache.d, seed=derive_seed(seed, _TABLES)))
    scores = soft_score(soft_bucket_probs(tables, q, cfg), hash_keys(tables, cache))
    y_tl = finite_table_output(scores, cache)
    sampler = make_sampler(scores, cache, M, derive_seed(seed, _SAMPLES))
    T = sample_estimator(scores, cache, sampler)
    population = population_estimate(q, cache, cfg, P, mc_tables,
                                     derive_seed(seed, _POPULATION), threads)
    target = angular_attention(q, cache, P)
    return TriangleReport(
        total=float(np.linalg.norm(T - target.output)),
        sampling_term=float(np.linalg.norm(T - y_tl)),
        table_term=float(np.linalg.norm(y_tl - population.output)),
        bias_term=float(np.linalg.norm(population.output - target.output)),
        epsilon_tau=population.epsilon_tau,
        L=L, M=M, tau=tau,
    )
