"""figplots command line: plot <figure_id> --data <dir> --out <file>."""

from __future__ import annotations

import argparse
import sys

from .spec import FIGURE_IDS, FigureDataError, FigureSpec
from .render import render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="figplots")
    sub = p.add_subparsers(dest="command", required=True)
    plot = sub.add_parser("plot", help="render one figure from CSV datasets")
    plot.add_argument("figure_id", choices=FIGURE_IDS)
    plot.add_argument("--data", required=True, help="directory with qreadout CSV files")
    plot.add_argument("--out", required=True, help="output image path")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(args.figure_id, args.data, args.out)
    try:
        out = render(spec)
    except FigureDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
