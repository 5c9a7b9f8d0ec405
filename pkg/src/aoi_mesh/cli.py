"""``aoi-mesh`` command line.

    aoi-mesh {simulate,meanfield,analyze,sweep} --spec FILE [--seed N] [--out FILE]
    aoi-mesh compare A.csv B.csv [--tol 0.1] [--column-a COL] [--column-b COL]

Exit codes: 0 success, 1 comparison outside tolerance, 2 parse error,
3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import ConfigError
from .experiment import MODES, CompareError, compare, parse_spec, run

EXIT_OK, EXIT_COMPARE, EXIT_PARSE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aoi-mesh", description="Age of information in ALOHA networks")
    sub = ap.add_subparsers(dest="command", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode, help=f"run the {mode} experiment described by --spec")
        sp.add_argument("--spec", required=True, help="key = value experiment file")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="CSV path (default: output_path or stdout)")
    cp = sub.add_parser("compare", help="relative gaps between two result CSVs")
    cp.add_argument("csv_a")
    cp.add_argument("csv_b")
    cp.add_argument("--tol", type=float, default=0.1)
    cp.add_argument("--column-a", default="analytic_aoi")
    cp.add_argument("--column-b", default=None)
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    if args.command == "compare":
        try:
            report = compare(args.csv_a, args.csv_b, args.tol, args.column_a, args.column_b)
        except OSError as err:
            print(f"aoi-mesh: {err}", file=sys.stderr)
            return EXIT_IO
        except CompareError as err:
            print(f"aoi-mesh: {err}", file=sys.stderr)
            return EXIT_PARSE
        print(report.summary())
        return EXIT_OK if report.passed else EXIT_COMPARE
    try:
        spec = parse_spec(args.spec)
    except OSError as err:
        print(f"aoi-mesh: {err}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as err:
        print(f"aoi-mesh: {args.spec}: {err}", file=sys.stderr)
        return EXIT_PARSE
    changes = {"mode": args.command}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            print("aoi-mesh: --seed out of [0, 2^64)", file=sys.stderr)
            return EXIT_PARSE
        changes["base"] = spec.base.replace(seed=args.seed)
    spec = dataclasses.replace(spec, **changes)
    try:
        status, text = run(spec, args.out)
    except OSError as err:
        print(f"aoi-mesh: {err}", file=sys.stderr)
        return EXIT_IO
    if not (args.out or spec.output_path):
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
