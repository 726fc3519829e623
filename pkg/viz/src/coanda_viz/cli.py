"""`coanda-plot <kind> --in <csv...> [--window a b] --out <img>`"""

from __future__ import annotations

import argparse
import sys

from .plots import PLOT_KINDS, PlotSpec, SchemaError, render


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="coanda-plot",
                                 description="render figures from solver CSVs")
    ap.add_argument("kind", choices=PLOT_KINDS)
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    help="input CSV path(s)")
    ap.add_argument("--window", nargs=2, type=float, default=None,
                    metavar=("LO", "HI"), help="real-part window (spectra)")
    ap.add_argument("--diagnostics", default=None,
                    help="diagnostics JSON to annotate shears/mu**")
    ap.add_argument("--title", default=None)
    ap.add_argument("--out", required=True, help="output image (.png or .svg)")
    args = ap.parse_args(argv)
    try:
        spec = PlotSpec(args.kind, args.inputs, args.out,
                        tuple(args.window) if args.window else None,
                        args.diagnostics, args.title)
        written = render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
