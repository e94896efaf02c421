"""``ttv`` command line: run, synth, compare-runs."""
from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from .config import load_config
from .errors import InputError, TTVError
from .io import write_csv

EXIT_OK, EXIT_INPUT, EXIT_STAGE = 0, 2, 3


def _grid(value):
    m = re.fullmatch(r"(\d+)[xX](\d+)", value)
    if not m:
        raise argparse.ArgumentTypeError("grid must look like 10x10")
    return int(m.group(1)), int(m.group(2))


def build_parser():
    p = argparse.ArgumentParser(prog="ttv", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline from a config file")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", type=Path, help="output directory (default: <config dir>/out)")
    run.add_argument("--workers", type=int, help="routing/permutation worker threads")
    run.add_argument("--seed", type=int)

    syn = sub.add_parser("synth", help="generate a synthetic city fixture")
    syn.add_argument("--grid", type=_grid, default=(10, 10))
    syn.add_argument("--seed", type=int, default=7)
    syn.add_argument("--downtown-headway", type=int, default=10, help="minutes")
    syn.add_argument("--rural-headway", type=int, default=60, help="minutes")
    syn.add_argument("--out", type=Path, required=True)

    cmp_ = sub.add_parser("compare-runs", help="Pearson matrix of zone TTV across run directories")
    cmp_.add_argument("runs", nargs="+", type=Path)
    cmp_.add_argument("--out", type=Path, help="write CSV here instead of stdout")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            from .pipeline import run_pipeline

            cfg = load_config(args.config, workers=args.workers, seed=args.seed)
            out = run_pipeline(cfg, args.out or args.config.parent / "out")
            print(out)
        elif args.command == "synth":
            from .synth import generate_synthetic_city

            rows, cols = args.grid
            try:
                city = generate_synthetic_city(rows, cols, args.downtown_headway, args.rural_headway, args.seed)
            except ValueError as exc:
                raise InputError(str(exc)) from None
            print(city.write(args.out))
        else:
            from .pipeline import compare_runs

            if len(args.runs) < 2:
                raise InputError("compare-runs needs at least two run directories")
            rows = compare_runs(args.runs)
            header = ["kind", "run_a", "run_b", "n", "r"]
            if args.out:
                write_csv(args.out, header, rows)
            else:
                write_csv(sys.stdout, header, rows)
    except InputError as exc:
        print(f"ttv: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TTVError as exc:
        print(f"ttv: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
