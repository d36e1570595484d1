"""Command-line interface.

Verbs: zoo build, run, import, leaderboard, verify.
Exit codes: 0 success, 1 config error, 2 partial attack failures
(or failed verification), 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import BenchError, InvalidInput, InvalidSpec
from .metrics import compute_leaderboards
from .reporting import FORMATS, emit_all, emit_curves, emit_leaderboards
from .runner import (BenchConfig, build_zoo, default_config, import_results,
                     persist_model, resolve_output_dir, run_benchmark,
                     save_config, verify_run)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_IO = 3


def _load_config(args) -> BenchConfig:
    if args.config is None:
        cfg = default_config()
    else:
        cfg = BenchConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "budget", None) is not None:
        cfg.budget = args.budget
    return cfg


def _formats(args):
    if getattr(args, "formats", None):
        fmts = tuple(f.strip() for f in args.formats.split(","))
        bad = [f for f in fmts if f not in FORMATS]
        if bad:
            raise InvalidSpec(f"unknown output formats: {bad}")
        return fmts
    return FORMATS


def cmd_zoo_build(args) -> int:
    cfg = _load_config(args)
    out = Path(resolve_output_dir(args.out, cfg)) / "zoo"
    out.mkdir(parents=True, exist_ok=True)
    entries = build_zoo(cfg)
    for entry in entries:
        path = out / f"{entry.identifier}.json"
        persist_model(entry, path)
        print(f"{entry.identifier}: clean_accuracy="
              f"{entry.clean_accuracy:.4f} -> {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    cfg.output_dir = resolve_output_dir(args.out, cfg)
    result = run_benchmark(cfg, jobs=args.jobs)
    save_config(cfg, result.out_dir / "config.json")
    emit_all(result.out_dir, result, _formats(args))
    for norm, board in sorted(result.leaderboards.items()):
        for entry in board["entries"]:
            print(f"l{norm}  #{entry.rank}  {entry.attack_id:<16} "
                  f"global={entry.global_optimality:.4f} "
                  f"median_queries={entry.median_queries}")
        for attack in board["incomplete"]:
            print(f"l{norm}  --  {attack:<16} incomplete")
    if result.diagnostics:
        for diag in result.diagnostics:
            print(f"warning: {diag['attack']} on {diag['model']}: "
                  f"{diag['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_import(args) -> int:
    merged = import_results(args.runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    leaderboards = compute_leaderboards(merged.store, merged.eps_max_map,
                                        merged.zoo_models)
    from .reporting import write_jsonl, write_meta
    write_jsonl(out / "records.jsonl", merged.records)
    write_meta(out / "run_meta.json", merged.meta)
    emit_leaderboards(out, leaderboards, merged.zoo_models, _formats(args))
    emit_curves(out, merged.store, merged.eps_max_map)
    n_attacks = sum(len(b["entries"]) for b in leaderboards.values())
    print(f"merged {len(args.runs)} run(s), {n_attacks} ranked attack(s) "
          f"-> {out}")
    return EXIT_OK


def cmd_leaderboard(args) -> int:
    merged = import_results([args.run])
    leaderboards = compute_leaderboards(merged.store, merged.eps_max_map,
                                        merged.zoo_models)
    out = Path(args.out) if args.out else Path(args.run)
    out.mkdir(parents=True, exist_ok=True)
    paths = emit_leaderboards(out, leaderboards, merged.zoo_models,
                              _formats(args))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_verify(args) -> int:
    report = verify_run(args.run)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["failed"] == 0 else EXIT_PARTIAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advbench",
        description="Benchmark gradient-based evasion attacks and rank "
                    "them by optimality under a query budget.")
    sub = parser.add_subparsers(dest="command", required=True)

    zoo = sub.add_parser("zoo", help="model zoo operations")
    zoo_sub = zoo.add_subparsers(dest="zoo_command", required=True)
    p = zoo_sub.add_parser("build", help="train and persist the zoo")
    p.add_argument("--config", help="benchmark config JSON (default zoo "
                                    "if omitted)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_zoo_build)

    p = sub.add_parser("run", help="execute the full benchmark")
    p.add_argument("--config", help="benchmark config JSON")
    p.add_argument("--out", help="output directory (overrides config and "
                                 "ADVBENCH_OUTPUT_DIR)")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--budget", type=int, help="override per-sample budget")
    p.add_argument("--jobs", type=int, default=1, help="worker count")
    p.add_argument("--formats", help="comma-separated: csv,json,html")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("import", help="merge previous run records")
    p.add_argument("runs", nargs="+", help="run directories to merge")
    p.add_argument("--out", required=True, help="merged output directory")
    p.add_argument("--formats", help="comma-separated: csv,json,html")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("leaderboard", help="re-emit leaderboards from "
                                           "stored records")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", help="output directory (defaults to the run)")
    p.add_argument("--formats", help="comma-separated: csv,json,html")
    p.set_defaults(func=cmd_leaderboard)

    p = sub.add_parser("verify", help="re-verify persisted perturbations")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidSpec, InvalidInput) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
