"""Command line: ``plots <kind> <csv...> -o <img> [--reference R]``."""

from __future__ import annotations

import argparse
import sys

from .render import PLOT_KINDS, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots",
                                     description="render run-record CSVs")
    parser.add_argument("kind", choices=PLOT_KINDS)
    parser.add_argument("csvs", nargs="+", metavar="csv")
    parser.add_argument("-o", "--out", required=True)
    parser.add_argument("--reference", type=float, default=None,
                        help="horizontal reference line (e.g. an optimal value)")
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.csvs, args.out, reference=args.reference)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
