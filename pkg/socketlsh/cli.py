#!/usr/bin/env python3
# cli.py - Command-line interface for socketlsh

import argparse
import sys
from dataclasses import fields

from socketlsh import __version__
from socketlsh.errors import EXIT_BAD_INPUT, EXIT_OK, ParameterError
from socketlsh.error_logger import classify_error, log_error
from socketlsh.run_config import OUTPUT_FORMATS, RunConfig
from socketlsh.settings import default_threads


def _int_list(text):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_common_options(parser):
    parser.add_argument("--config", help="JSON or YAML run config; flags override it")
    parser.add_argument("--seed", type=lambda s: int(s, 0),
                        help="Master seed (default: SOCKET_SEED, else 0)")
    parser.add_argument("--out", help="Output path (default: under SOCKET_OUTPUT_BASE)")
    parser.add_argument("--format", choices=OUTPUT_FORMATS, default=None,
                        help="csv (with a .json envelope next to it) or a single json envelope")
    parser.add_argument("--threads", type=int, help="Worker cap (default: SOCKET_THREADS, else 1)")


def _add_instance_options(parser):
    parser.add_argument("--n", dest="N", type=int, help="Number of keys")
    parser.add_argument("--d", dest="d", type=int, help="Head dimension")


def _add_lsh_options(parser):
    parser.add_argument("--p", dest="P", type=int, help="Hyperplanes per table (P <= 16)")
    parser.add_argument("--l", dest="L", type=int, help="Number of hash tables")
    parser.add_argument("--tau", type=float, help="Soft-bucket temperature")


def _add_selection_options(parser):
    parser.add_argument("--k", type=int, help="Token budget (default: N/10)")
    parser.add_argument("--mode", choices=("exact", "soft-count"), default=None,
                        help="Logits over the selected keys")
    parser.add_argument("--sink", type=int, help="Sink tokens always kept")
    parser.add_argument("--window", type=int, help="Local-window tokens always kept")
    parser.add_argument("--scale", action="store_true", default=None,
                        help="Divide exact logits by sqrt(d)")


def _add_kv_options(parser):
    parser.add_argument("--kv", help="SKT1 key/value file (default: Gaussian N x d draw)")
    parser.add_argument("--mask", help="Mask sidecar: N bytes of 0/1")


def create_parser():
    parser = argparse.ArgumentParser(
        description="Soft-LSH key scoring for sparse attention.", prog="socketlsh"
    )

    parser.add_argument(
        "--version", action="version", version=f"socketlsh {__version__}"
    )

    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    # Synthetic data
    gen_parser = subparsers.add_parser("gen", help="Write standard-Gaussian keys/values as SKT1")
    _add_common_options(gen_parser)
    _add_instance_options(gen_parser)

    # End-to-end attention
    attend_parser = subparsers.add_parser(
        "attend", help="Score, select and attend queries against a KV cache"
    )
    _add_common_options(attend_parser)
    _add_instance_options(attend_parser)
    _add_lsh_options(attend_parser)
    _add_selection_options(attend_parser)
    _add_kv_options(attend_parser)
    attend_parser.add_argument("--query-index", type=int, help="Use key row i as the query")
    attend_parser.add_argument("--query-file", help=".npy or whitespace-separated queries, one per row")
    attend_parser.add_argument("--queries", type=int, help="Number of fresh Gaussian queries")
    attend_parser.add_argument("--index", help="Reuse an SKTI bucket index instead of hashing")
    attend_parser.add_argument("--index-out", help="Export the bucket index as SKTI")

    # Ranking quality
    rank_parser = subparsers.add_parser(
        "rank-eval", help="Soft vs hard LSH ranking quality over a k grid"
    )
    _add_common_options(rank_parser)
    _add_instance_options(rank_parser)
    _add_lsh_options(rank_parser)
    rank_parser.add_argument("--k-grid", type=_int_list, help="Comma-separated budgets")
    rank_parser.add_argument("--seeds", type=int, help="Instances per k")
    rank_parser.add_argument("--bins", type=int, help="Histogram bins")

    # Theory experiments
    theory_parser = subparsers.add_parser("theory", help="Error-decomposition experiments")
    theory_subparsers = theory_parser.add_subparsers(
        dest="subcommand", help="Experiment to run"
    )
    for name, help_text in (
        ("sweep-l", "Finite-table error against the number of tables"),
        ("sweep-m", "Sampling error against the number of samples"),
        ("sweep-tau", "Soft-bucketization bias against the temperature"),
        ("corr", "Correlation of hard and soft scores with q.k"),
        ("triangle", "Total error next to its three terms"),
        ("variance", "Per-table score variance against the Bernoulli bound"),
    ):
        sub = theory_subparsers.add_parser(name, help=help_text)
        _add_common_options(sub)
        _add_instance_options(sub)
        _add_lsh_options(sub)
        sub.add_argument("--m", dest="M", type=int, help="Samples for the estimator")
        sub.add_argument("--l-grid", type=_int_list, help="Comma-separated L values")
        sub.add_argument("--m-grid", type=_int_list, help="Comma-separated M values")
        sub.add_argument("--tau-grid", type=_float_list, help="Comma-separated temperatures")
        sub.add_argument("--replicas", type=int, help="Replicas per sweep point")
        sub.add_argument("--mc-tables", type=int, help="Monte-Carlo tables for population quantities")
        sub.add_argument("--mc-pairs", type=int, help="Monte-Carlo keys for the correlation")
        sub.add_argument("--queries", type=int, help="(q, k) pairs for the variance check")
        sub.add_argument("--raw-planes", dest="orthonormal", action="store_false", default=None,
                         help="Normalized but not orthogonalized planes (report only)")

    # Benchmark
    bench_parser = subparsers.add_parser("bench", help="CPU timings per phase")
    _add_common_options(bench_parser)
    _add_instance_options(bench_parser)
    _add_lsh_options(bench_parser)
    _add_selection_options(bench_parser)
    _add_kv_options(bench_parser)

    return parser


def build_config(args) -> RunConfig:
    """RunConfig from a config file (if any) overridden by explicit flags."""
    names = {f.name for f in fields(RunConfig)} - {"command", "subcommand", "format_version"}
    overrides = {name: getattr(args, name) for name in names if hasattr(args, name)}
    subcommand = getattr(args, "subcommand", None)

    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
        if cfg.command != args.command or (subcommand and cfg.subcommand not in (None, subcommand)):
            raise ParameterError(
                f"config {args.config} is for {cfg.command!r} {cfg.subcommand!r}, "
                f"not {args.command!r} {subcommand!r}"
            )
        cfg = cfg.merged({"subcommand": subcommand})
    else:
        cfg = RunConfig(command=args.command, subcommand=subcommand)

    cfg = cfg.merged(overrides)
    if overrides.get("threads") is None:
        cfg = cfg.merged({"threads": default_threads()})
    return cfg


def main(argv=None):
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command or args.command is None:
        parser.print_help()
        return EXIT_BAD_INPUT

    if args.command == "theory" and not args.subcommand:
        parser.print_help()
        return EXIT_BAD_INPUT

    from socketlsh.commands import enforce_checks, run

    try:
        cfg = build_config(args)
        paths, envelope = run(cfg)
        for path in paths:
            print(path)  # Print output paths to stdout
        enforce_checks(envelope)
    except Exception as e:
        error_type, exit_code = classify_error(e)
        log_error(
            {"command": args.command, "subcommand": getattr(args, "subcommand", None)},
            e,
            error_type,
            exit_code=exit_code,
            failed_checks=getattr(e, "failed", None),
        )
        return exit_code

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
