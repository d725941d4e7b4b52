"""Command line entry point: ``plots render <spec.json>``.

The spec file holds either one figure spec object or a list of them; see
figures.py for the spec grammar.
"""

import argparse
import json
import sys
from typing import List, Optional

from .figures import PlotError, render


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots", description="render experiment CSVs into figures")
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="render figure spec(s)")
    p_render.add_argument("spec", help="path to a JSON figure spec")
    args = parser.parse_args(argv)

    try:
        with open(args.spec) as f:
            spec = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot load spec '{args.spec}': {exc}", file=sys.stderr)
        return 1
    specs = spec if isinstance(spec, list) else [spec]
    try:
        for s in specs:
            out = render(s)
            print(out)
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
