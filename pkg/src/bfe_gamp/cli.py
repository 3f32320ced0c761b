"""Command-line entry point: ``run``, ``sweep`` and ``verify``.

Exit codes: 0 on success, 1 when a verification case fails, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
from typing import Optional

from .errors import ParameterError
from .experiments import (ConfigError, SweepConfig, config_with, load_config, monte_carlo_sweep,
                          resolve_threads, run_trial, write_sweep)
from .verification import SUITES, run_suites

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _solver_list(text: str) -> tuple:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _suite_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bfe-gamp", description="ADMM-GAMP and GAMP benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--threads", type=int, help="worker processes (BFE_GAMP_THREADS wins)")
        p.add_argument("--solver", type=_solver_list, metavar="LIST",
                       help="comma-separated subset of admm_gamp,gamp,genie")

    p_run = sub.add_parser("run", help="solve a single instance and print a report")
    common(p_run)
    p_run.add_argument("--point", type=int, default=0, help="grid index of the instance")
    p_run.add_argument("--trial", type=int, default=0, help="trial index of the instance")

    p_sweep = sub.add_parser("sweep", help="Monte-Carlo sweep; writes results.csv and trials.csv")
    common(p_sweep)
    p_sweep.add_argument("--out", metavar="DIR", default=".", help="output directory")

    p_ver = sub.add_parser("verify", help="run verification suites; prints a CSV table")
    p_ver.add_argument("--suite", type=_suite_list, metavar="LIST",
                       help=f"comma-separated subset of {','.join(SUITES)}")
    return parser


def _load(args) -> SweepConfig:
    cfg = load_config(args.config) if args.config else SweepConfig()
    return config_with(cfg, base_seed=args.seed, solvers=args.solver, threads=args.threads)


def _cmd_run(args, out) -> int:
    cfg = _load(args)
    if not 0 <= args.point < len(cfg.grid):
        raise ConfigError("grid", f"point index {args.point} outside the grid")
    rows = run_trial(cfg, args.point, args.trial)
    print(f"experiment={cfg.experiment} point={cfg.grid[args.point]} trial={args.trial} "
          f"seed={rows[0]['seed'] if rows else 'n/a'}", file=out)
    for row in rows:
        print(f"  {row['solver']:<10} nmse_db={row['nmse_db']:9.3f} iters={row['iters']:6d} "
              f"diverged={row['diverged']} gaps=({row['moment_gap']:.2e}, {row['dual_gap']:.2e}, "
              f"{row['variance_gap']:.2e})", file=out)
    return EXIT_OK


def _cmd_sweep(args, out) -> int:
    if not args.config:
        raise ConfigError("--config", "sweep needs a config file")
    cfg = _load(args)
    result = monte_carlo_sweep(cfg, threads=resolve_threads(cfg.threads))
    for path in write_sweep(result, args.out):
        print(path, file=out)
    return EXIT_OK


def _cmd_verify(args, out) -> int:
    reports = run_suites(args.suite)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["suite", "case", "measured", "threshold", "pass"])
    for rep in reports:
        for suite, case, measured, threshold, passed in rep.rows():
            w.writerow([suite, case, repr(measured), repr(threshold), "true" if passed else "false"])
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def main(argv: Optional[list] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "verify": _cmd_verify}
    try:
        return handlers[args.command](args, out)
    except (ConfigError, ParameterError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
