"""Command-line benchmark driver.

Subcommands: `run` solves one configuration, `sweep` runs a grid from a
TOML config, `stopping` performs the tolerance-requirement study.  All
emit CSV.
"""

from __future__ import annotations

import argparse
import sys

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .bench import RunSpec, expand_grid, run_case, stopping_study, sweep
from .bench import CSV_COLUMNS


def _add_run_args(parser):
    parser.add_argument("--case", required=True,
                        choices=["th-tri", "th-quad", "bdm", "rt"])
    parser.add_argument("--k", type=int, required=True)
    parser.add_argument("--nu", type=int, default=2)
    parser.add_argument("--levels", type=int, default=1)
    parser.add_argument("--rtol", type=float, default=1e-10)
    parser.add_argument("--max-it", type=int, default=100)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--viscosity", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--weighting", choices=["invmult", "unit"],
                        default="invmult")
    parser.add_argument("--cheby", choices=["degree", "repeat"],
                        default="repeat")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stokes-mg",
        description="Multigrid-preconditioned solvers for the enclosed-flow "
                    "benchmark on the unit square")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="solve one configuration")
    _add_run_args(p_run)
    p_run.add_argument("--out", required=True)

    p_sweep = sub.add_parser("sweep", help="run a grid of configurations")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)

    p_stop = sub.add_parser("stopping",
                            help="find the loosest adequate tolerance")
    p_stop.add_argument("--case", required=True, choices=["th-quad", "bdm"])
    p_stop.add_argument("--k", type=int, required=True)
    p_stop.add_argument("--max-levels", type=int, required=True)
    p_stop.add_argument("--nu", type=int, default=1)
    p_stop.add_argument("--seed", type=int, default=0)
    p_stop.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    if args.command == "run":
        spec = RunSpec(case=args.case, k=args.k, nu=args.nu,
                       levels=args.levels, rtol=args.rtol, max_it=args.max_it,
                       alpha=args.alpha, viscosity=args.viscosity,
                       seed=args.seed, weighting=args.weighting,
                       cheby=args.cheby)
        record = run_case(spec)
        with open(args.out, "w") as fh:
            fh.write(CSV_COLUMNS + "\n")
            fh.write(record.csv_row() + "\n")
        print(record.csv_row())
        return 0

    if args.command == "sweep":
        with open(args.config, "rb") as fh:
            table = tomllib.load(fh)
        specs = expand_grid(table)
        with open(args.out, "w") as fh:
            sweep(specs, fh)
        print(f"wrote {len(specs)} rows to {args.out}")
        return 0

    with open(args.out, "w") as fh:
        rows = stopping_study(args.case, args.k, args.max_levels,
                              nu=args.nu, seed=args.seed, out=fh)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
