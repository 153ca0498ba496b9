"""Command-line entry point: scrc-render --in <csv> --kind <panel> --out <img>."""

from __future__ import annotations

import argparse
import sys

from .figures import ALL_KINDS, EmptyPanelError, FigureSpec, SchemaMismatchError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scrc-render", description=__doc__)
    parser.add_argument("--in", dest="input_csv", required=True,
                        help="aggregate CSV from 'scrc sweep' (the _agg file)")
    parser.add_argument("--kind", required=True, choices=ALL_KINDS)
    parser.add_argument("--out", required=True, help="output image (png/svg/pdf)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        path = render(FigureSpec(args.input_csv, args.kind, args.out))
    except (SchemaMismatchError, EmptyPanelError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
