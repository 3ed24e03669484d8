"""Command-line entry point: ``figures <kind> --in CSV --out PNG/SVG``."""

from __future__ import annotations

import argparse
import sys

from .plots import PlotError, plot_regret, plot_risk, plot_smoothing

_KINDS = {
    "risk_curve": plot_risk,
    "regret_curve": plot_regret,
    "smoothing": plot_smoothing,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures",
        description="Render countsmooth benchmark CSVs as figures.",
    )
    parser.add_argument("kind", choices=sorted(_KINDS),
                        help="which plot to draw")
    parser.add_argument("--in", dest="input", required=True,
                        help="input CSV (aggregate or per-symbol schema)")
    parser.add_argument("--out", dest="output", required=True,
                        help="output image path (.png or .svg)")
    parser.add_argument("--logx", action="store_true", help="log-scale x axis")
    parser.add_argument("--logy", action="store_true", help="log-scale y axis")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        _KINDS[args.kind](args.input, args.output, logx=args.logx, logy=args.logy)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
