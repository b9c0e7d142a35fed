"""Command line entry point for figure rendering."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .jobs import FigureError, FigureKind, build_job
from .render import render


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="render-figures",
        description="Render figures from tilted-piston run directories.",
    )
    parser.add_argument(
        "--kind",
        required=True,
        choices=[kind.value for kind in FigureKind],
        help="figure layout to produce",
    )
    parser.add_argument(
        "--in",
        dest="indir",
        required=True,
        metavar="DIR",
        help="run directory holding the input CSV files",
    )
    parser.add_argument(
        "--out",
        required=True,
        metavar="FILE",
        help="image path; .svg or .pdf select the format, default .svg",
    )
    args = parser.parse_args(argv)
    try:
        job = build_job(FigureKind(args.kind), Path(args.indir), Path(args.out))
        written = render(job)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(written)
    return 0


if __name__ == "__main__":
    sys.exit(main())
