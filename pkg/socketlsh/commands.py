#!/usr/bin/env python3
# commands.py - gen, attend, rank-eval, theory and bench runs

import statistics
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from socketlsh import settings
from socketlsh.attention import (SelectionConfig, attend_subset, dense_attention,
                                 relative_error, select_top_k, sparse_attention)
from socketlsh.errors import CheckFailure, DimensionMismatchError, FormatError, ParameterError, StorageError
from socketlsh.error_logger import log_event
from socketlsh.kv_format import (check_kv_header, read_index, read_kv, read_mask, write_index,
                                 write_kv)
from socketlsh.lsh_core import (LshParams, build_tables, hash_keys, memory_bits_per_token)
from socketlsh.metrics import (dominance_checks, jaccard, ndcg, precision, ranking_comparison,
                               relevance_grades)
from socketlsh.parallel import derive_seed
from socketlsh.run_config import ResultEnvelope, RunConfig, write_outputs
from socketlsh.soft_scoring import SoftHashConfig, masked_value_scores, soft_bucket_probs, soft_score
from socketlsh.synthetic import InstanceConfig, gaussian_cache, gaussian_queries, gaussian_query
from socketlsh import theory_lab

THEORY_SUBCOMMANDS = ("sweep-l", "sweep-m", "sweep-tau", "corr", "triangle", "variance")
BENCH_REPEATS = 5
FULL_BUDGET_TOLERANCE = 1e-6

# seed streams under the master seed
_TABLES, _QUERIES, _PAIRS = 1, 2, 3

COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "gen": {"N": 4096, "d": 128},
    "attend": {"N": 4096, "d": 128, "P": settings.DEFAULT_P, "L": settings.DEFAULT_L,
               "tau": settings.DEFAULT_TAU, "queries": 1},
    "rank-eval": {"N": 4096, "d": 128, "P": settings.DEFAULT_P, "L": settings.DEFAULT_L,
                  "tau": settings.DEFAULT_TAU, "seeds": 20,
                  "k_grid": list(settings.DEFAULT_K_GRID), "bins": settings.DEFAULT_BINS},
    "theory": {"N": 1024, "d": 64, "P": settings.DEFAULT_P, "L": settings.DEFAULT_L,
               "tau": settings.DEFAULT_TAU, "M": 64, "replicas": 20, "mc_tables": 10000,
               "mc_pairs": 100000, "queries": 20,
               "l_grid": [8, 16, 32, 64, 128, 256, 512],
               "m_grid": [8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
               "tau_grid": [0.01, 0.1, 0.5, 1.0, 10.0, 100.0]},
    "bench": {"N": 131072, "d": 128, "P": settings.DEFAULT_P, "L": settings.DEFAULT_L,
              "tau": settings.DEFAULT_TAU},
}


@contextmanager
def _phase(timings: Dict[str, float], name: str):
    started = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - started


def _median_time(fn, repeats: int = BENCH_REPEATS):
    """(median wall-clock seconds, result of the last call)."""
    times = []
    result = None
    for _ in range(repeats):
        started = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - started)
    return statistics.median(times), result


def resolve_config(cfg: RunConfig) -> RunConfig:
    """Fill command defaults and the seed fallback."""
    cfg = cfg.with_defaults(COMMAND_DEFAULTS.get(cfg.command, {}))
    if cfg.seed is None:
        cfg = cfg.merged({"seed": settings.default_seed()})
    return cfg


def default_output_path(cfg: RunConfig) -> Path:
    settings.ensure_directories()
    base = {"gen": settings.DATA_DIR, "theory": settings.THEORY_DIR}.get(cfg.command,
                                                                         settings.RUNS_DIR)
    name = cfg.command if cfg.subcommand is None else f"{cfg.command}-{cfg.subcommand}"
    suffix = "skt1" if cfg.command == "gen" else cfg.format
    return base / f"{name}-seed{cfg.seed}.{suffix}"


def _load_cache(cfg: RunConfig):
    if cfg.kv:
        return read_kv(cfg.kv, cfg.mask)
    cache = gaussian_cache(cfg.N, cfg.d, cfg.seed)
    if cfg.mask:
        cache = cache.with_mask(read_mask(cfg.mask, cache.N))
    return cache


def _load_queries(cfg: RunConfig, cache) -> np.ndarray:
    """Queries as (count, d): a key row, a .npy/text file, or fresh Gaussian draws."""
    if cfg.query_index is not None:
        if not 0 <= cfg.query_index < cache.N:
            raise ParameterError(f"query index {cfg.query_index} outside [0, {cache.N})")
        return np.asarray(cache.keys[cfg.query_index], dtype=np.float64)[None, :]
    if cfg.query_file:
        try:
            if str(cfg.query_file).endswith(".npy"):
                queries = np.load(cfg.query_file)
            else:
                queries = np.loadtxt(cfg.query_file, ndmin=2)
        except OSError as e:
            raise StorageError(f"could not read queries from {cfg.query_file}: {e}") from e
        except ValueError as e:
            raise FormatError(f"malformed query file {cfg.query_file}: {e}") from e
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[1] != cache.d:
            raise DimensionMismatchError(
                f"queries have dimension {queries.shape[1]}, cache has {cache.d}"
            )
        return queries
    return gaussian_queries(cfg.queries, cache.d, derive_seed(cfg.seed, _QUERIES))


def _selection(cfg: RunConfig, k: int) -> SelectionConfig:
    """Emulation default: half of the retained budget each for sink and window, capped at k/4."""
    default = min(settings.EMULATION_RETAINED // 2, k // 4)
    sink = default if cfg.sink is None else cfg.sink
    window = default if cfg.window is None else cfg.window
    return SelectionConfig(k=k, logit_mode=cfg.mode, sink_tokens=sink,
                           local_window=window, scale=cfg.scale)


def _assignment(cfg: RunConfig, tables, cache):
    if cfg.index:
        assignment = read_index(cfg.index, expected_N=cache.N)
        if assignment.P != tables.P or assignment.L != tables.L:
            raise ParameterError(
                f"index was built with P={assignment.P}, L={assignment.L}; "
                f"run uses P={tables.P}, L={tables.L}"
            )
        return assignment
    return hash_keys(tables, cache)


def cmd_gen(cfg: RunConfig) -> Tuple[ResultEnvelope, List[Dict[str, Any]]]:
    """Standard-Gaussian keys and values written as SKT1."""
    check_kv_header(cfg.N, cfg.d)
    timings: Dict[str, float] = {}
    with _phase(timings, "generate"):
        cache = gaussian_cache(cfg.N, cfg.d, cfg.seed)
    path = Path(cfg.out) if cfg.out else default_output_path(cfg)
    with _phase(timings, "write"):
        write_kv(path, cache)
    results = {"path": str(path), "N": cfg.N, "d": cfg.d,
               "bytes": 12 + 8 * cfg.N * cfg.d}
    return ResultEnvelope(config=cfg, results=results, timings=timings), []


def cmd_attend(cfg: RunConfig) -> Tuple[ResultEnvelope, List[Dict[str, Any]]]:
    """
    Hash, score, select and attend every query, next to the dense baseline.

    Each row reports the relative error against dense attention and the
    selected set's precision, Jaccard and NDCG against the exact top-k.
    """
    timings: Dict[str, float] = {}
    cache = _load_cache(cfg)
    queries = _load_queries(cfg, cache)
    k = cfg.k if cfg.k is not None else max(1, cache.N // 10)
    sel = _selection(cfg, k)
    soft = SoftHashConfig(tau=cfg.tau)
    params = LshParams(P=cfg.P, L=cfg.L, d=cache.d, seed=derive_seed(cfg.seed, _TABLES))

    with _phase(timings, "hash"):
        tables = build_tables(params)
        assignment = _assignment(cfg, tables, cache)

    mask = np.asarray(cache.mask, dtype=bool)
    rows = []
    for index, q in enumerate(queries):
        with _phase(timings, "score"):
            scores = soft_score(soft_bucket_probs(tables, q, soft), assignment)
        with _phase(timings, "attend"):
            sparse = sparse_attention(q, cache, scores, sel)
        selected = sparse.selected
        ranking = masked_value_scores(scores, cache)
        with _phase(timings, "dense"):
            dense = dense_attention(q, cache, scale=sel.scale)

        truth = np.where(mask, np.asarray(cache.keys, dtype=np.float64) @ q, -np.inf)
        truth_top = np.argsort(-truth, kind="stable")[:k]
        ordered = selected[np.argsort(-ranking.scores[selected], kind="stable")]
        grades = relevance_grades(np.where(mask, truth, np.min(truth[mask])))
        rows.append({
            "query": index,
            "k": int(selected.shape[0]),
            "relative_error": relative_error(sparse.output, dense.output),
            "precision": precision(selected, truth_top, k),
            "jaccard": jaccard(selected, truth_top),
            "ndcg": ndcg(grades[ordered], ideal=grades[mask]),
        })

    if cfg.index_out:
        write_index(cfg.index_out, assignment)

    checks = {}
    if k == int(mask.sum()) and sel.logit_mode == "exact":
        checks["full_budget_identity"] = all(
            r["relative_error"] <= FULL_BUDGET_TOLERANCE for r in rows
        )
    results = {
        "N": cache.N, "d": cache.d, "k": k, "queries": len(rows),
        "sink_tokens": sel.sink_tokens, "local_window": sel.local_window,
        "memory_bits_per_token": memory_bits_per_token(params),
    }
    for name in ("relative_error", "precision", "jaccard", "ndcg"):
        results[f"mean_{name}"] = float(np.mean([r[name] for r in rows]))
    return ResultEnvelope(config=cfg, results=results, timings=timings, checks=checks), rows


def cmd_rank_eval(cfg: RunConfig) -> Tuple[ResultEnvelope, List[Dict[str, Any]]]:
    """Soft vs hard LSH ranking quality over the k grid."""
    timings: Dict[str, float] = {}
    with _phase(timings, "evaluate"):
        summary = ranking_comparison(cfg.N, cfg.d, cfg.P, cfg.L, cfg.tau, cfg.k_grid,
                                     cfg.seeds, cfg.seed, cfg.bins, cfg.threads)
    strict = 128 if 128 in cfg.k_grid else None
    checks = dominance_checks(summary, strict_mass_k=strict)
    results = {"means": summary.means, "standard_errors": summary.standard_errors,
               "histograms": summary.histograms}
    rows = [asdict(row) for row in summary.rows]
    return ResultEnvelope(config=cfg, results=results, timings=timings, checks=checks), rows


def _sweep_envelope(cfg, outcome, timings):
    results = dict(outcome.summary)
    if outcome.slope is not None:
        results["slope_fit"] = asdict(outcome.slope)
    rows = [r.as_row() for r in outcome.results]
    return ResultEnvelope(config=cfg, results=results, timings=timings,
                          checks=outcome.checks), rows


def cmd_theory(cfg: RunConfig) -> Tuple[ResultEnvelope, List[Dict[str, Any]]]:
    """Dispatch one theory_lab experiment."""
    if cfg.subcommand not in THEORY_SUBCOMMANDS:
        raise ParameterError(f"theory subcommand must be one of {THEORY_SUBCOMMANDS}, "
                             f"got {cfg.subcommand!r}")
    timings: Dict[str, float] = {}
    instance = InstanceConfig(N=cfg.N, d=cfg.d, seed=cfg.seed)

    with _phase(timings, cfg.subcommand):
        if cfg.subcommand == "sweep-l":
            outcome = theory_lab.sweep_L(instance, cfg.l_grid, cfg.replicas, P=cfg.P,
                                         tau=cfg.tau, mc_tables=cfg.mc_tables,
                                         seed=cfg.seed, threads=cfg.threads)
            return _sweep_envelope(cfg, outcome, timings)
        if cfg.subcommand == "sweep-m":
            outcome = theory_lab.sweep_M(instance, cfg.m_grid, cfg.replicas, P=cfg.P,
                                         L=cfg.L, tau=cfg.tau, seed=cfg.seed,
                                         threads=cfg.threads)
            return _sweep_envelope(cfg, outcome, timings)
        if cfg.subcommand == "sweep-tau":
            outcome = theory_lab.sweep_tau(instance, cfg.tau_grid, mc_tables=cfg.mc_tables,
                                           P=cfg.P, seed=cfg.seed, threads=cfg.threads)
            return _sweep_envelope(cfg, outcome, timings)
        if cfg.subcommand == "corr":
            experiment = theory_lab.correlation_experiment(cfg.P, cfg.d, cfg.mc_pairs,
                                                           seed=cfg.seed,
                                                           orthonormal=cfg.orthonormal)
            # the raw-plane configuration is report-only
            checks = experiment.checks() if cfg.orthonormal else {}
            row = asdict(experiment)
            return ResultEnvelope(config=cfg, results=row, timings=timings,
                                  checks=checks), [row]
        if cfg.subcommand == "triangle":
            report = theory_lab.triangle_report(instance, cfg.L, cfg.M, cfg.tau, P=cfg.P,
                                                mc_tables=cfg.mc_tables, seed=cfg.seed,
                                                threads=cfg.threads)
            row = dict(asdict(report), holds=report.holds)
            return ResultEnvelope(config=cfg, results=row, timings=timings,
                                  checks={"triangle_holds": report.holds}), [row]

        rows = []
        check_result: Dict[str, bool] = {}
        for pair in range(cfg.queries):
            q_vec = gaussian_query(cfg.d, derive_seed(cfg.seed, _PAIRS, pair, 0))
            k_vec = gaussian_query(cfg.d, derive_seed(cfg.seed, _PAIRS, pair, 1))
            check = theory_lab.variance_extremality(q_vec, k_vec, cfg.P, cfg.tau,
                                                    cfg.mc_tables,
                                                    seed=derive_seed(cfg.seed, _PAIRS, pair))
            check_result = check.checks()
            rows.append(dict(asdict(check), pair=pair, soft_bound=check.soft_bound,
                             hard_bound=check.hard_bound,
                             hard_variance_se=check.hard_variance_se, **check_result))
        checks = {name: all(r[name] for r in rows) for name in check_result}
        return ResultEnvelope(config=cfg, results={"pairs": len(rows)}, timings=timings,
                              checks=checks), rows


def cmd_bench(cfg: RunConfig) -> Tuple[ResultEnvelope, List[Dict[str, Any]]]:
    """
    Median-of-5 CPU timings per phase.

    Scoring reads L u16 ids and one f32 norm per key, against 2d bytes for a
    bf16 key; the validation pass checks k = N against dense attention.
    """
    cache = _load_cache(cfg)
    q = gaussian_query(cache.d, derive_seed(cfg.seed, _QUERIES))
    k = cfg.k if cfg.k is not None else max(1, cache.N // 10)
    sel = _selection(cfg, k)
    soft = SoftHashConfig(tau=cfg.tau)
    params = LshParams(P=cfg.P, L=cfg.L, d=cache.d, seed=derive_seed(cfg.seed, _TABLES))

    def prefill():
        tables = build_tables(params)
        return tables, hash_keys(tables, cache, cfg.threads)

    hash_time, (tables, assignment) = _median_time(prefill)
    score_time, scores = _median_time(
        lambda: soft_score(soft_bucket_probs(tables, q, soft), assignment))
    ranking = masked_value_scores(scores, cache)
    select_time, selected = _median_time(lambda: select_top_k(ranking, sel))
    attend_time, sparse = _median_time(
        lambda: attend_subset(q, cache, selected, sel.logit_mode,
                              soft_counts=scores.w_hat, scale=sel.scale))
    dense_time, dense = _median_time(lambda: dense_attention(q, cache, scale=sel.scale))

    selectable = int(np.count_nonzero(cache.mask))
    full = SelectionConfig(k=selectable, logit_mode="exact", scale=sel.scale)
    validation = attend_subset(q, cache, select_top_k(ranking, full), "exact", scale=sel.scale)
    validation_error = relative_error(validation.output, dense.output)
    log_event("bench_validation", relative_error=validation_error, k=selectable)

    timings = {"hash": hash_time, "score": score_time, "select": select_time,
               "attend": attend_time, "dense": dense_time,
               "keys_per_second": cache.N / score_time if score_time > 0 else float("inf")}
    results = {
        "N": cache.N, "d": cache.d, "P": cfg.P, "L": cfg.L, "k": k,
        "bytes_per_key_scored": 2 * cfg.L + 4,
        "bytes_per_key_full": 2 * cache.d,
        "memory_bits_per_token": memory_bits_per_token(params),
        "sparse_relative_error": relative_error(sparse.output, dense.output),
        "validation_relative_error": validation_error,
    }
    checks = {"full_budget_identity": validation_error <= FULL_BUDGET_TOLERANCE}
    rows = [{"phase": name, "median_seconds": timings[name]}
            for name in ("hash", "score", "select", "attend", "dense")]
    return ResultEnvelope(config=cfg, results=results, timings=timings, checks=checks), rows


COMMANDS = {
    "gen": cmd_gen,
    "attend": cmd_attend,
    "rank-eval": cmd_rank_eval,
    "theory": cmd_theory,
    "bench": cmd_bench,
}


def run(cfg: RunConfig) -> Tuple[List[Path], ResultEnvelope]:
    """Resolve, execute and write one run; returns the written paths and the envelope."""
    cfg = resolve_config(cfg)
    if cfg.command not in COMMANDS:
        raise ParameterError(f"unknown command {cfg.command!r}")
    log_event("run_started", command=cfg.command, subcommand=cfg.subcommand, seed=cfg.seed)
    envelope, rows = COMMANDS[cfg.command](cfg)

    if cfg.command == "gen":
        paths = [Path(envelope.results["path"])]
    else:
        out = Path(cfg.out) if cfg.out else default_output_path(cfg)
        paths = write_outputs(out, envelope, rows)

    return paths, envelope


def enforce_checks(envelope: ResultEnvelope):
    """
    Log every declared check of a written run.

    Raises:
        CheckFailure: one or more declared checks failed
    """
    for name, ok in sorted(envelope.checks.items()):
        log_event("check", level="info" if ok else "warning", name=name, passed=bool(ok))
    failed = envelope.failed_checks
    if failed:
        raise CheckFailure(f"{len(failed)} check(s) failed: {', '.join(failed)}", failed=failed)
