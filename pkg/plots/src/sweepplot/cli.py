"""Command line: render a sweep CSV into a figure."""

from __future__ import annotations

import argparse
import sys

from .figures import X_AXES, plot_sweep
from .table import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sweepplot", description=__doc__)
    parser.add_argument("csv", help="sweep CSV produced by the experiment runner")
    parser.add_argument("--x", choices=X_AXES, default="gamma", help="sweep axis to plot")
    parser.add_argument(
        "--group-by", choices=("n_samples", "env", "loss"), default="n_samples",
        help="one plotted line per value of this column",
    )
    parser.add_argument("--out", required=True, help="output image path (format by extension)")
    args = parser.parse_args(argv)
    try:
        series = plot_sweep(args.csv, x_axis=args.x, group_by=args.group_by, out_path=args.out)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"sweepplot: {exc}", file=sys.stderr)
        return 2
    total = sum(len(x) for x, _, _ in series.values())
    print(f"wrote {args.out}: {len(series)} series, {total} points")
    return 0


if __name__ == "__main__":
    sys.exit(main())
