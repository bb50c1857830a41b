"""Command line front end: ``lobclear {simulate,compare,bias,analyze}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .experiment import (
    ConfigError,
    cmd_analyze,
    cmd_bias,
    cmd_compare,
    cmd_simulate,
    parse_config,
    parse_mode,
)

log = logging.getLogger("lobclear")


def _budgets(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"budgets must be comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("at least one budget is required")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobclear", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run simulations and write price CSVs")
    sim.add_argument("--config", help="JSON config file (defaults: reference setup)")
    sim.add_argument("--mode", help="sequential | parallel | parallel_deterministic")
    sim.add_argument("--seed", type=int, help="seed of repetition 0")
    sim.add_argument("--reps", type=int, help="number of repetitions")
    sim.add_argument("--out", help="output directory")
    sim.add_argument("--emit-trades", action="store_true", help="also write per-run trade logs")

    cmp_ = sub.add_parser("compare", help="sequential vs round-robin parallel on the same seeds")
    cmp_.add_argument("--config")
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--reps", type=int)
    cmp_.add_argument("--out")

    b = sub.add_parser("bias", help="exact buy probabilities of the one-tick budget model")
    b.add_argument("--budget", type=_budgets, required=True, help="budget, or comma-separated budgets")
    b.add_argument("--traders", type=int, default=1, help="replicate a single budget over this many traders")
    b.add_argument("--price", type=float, required=True)
    b.add_argument("--assets", type=int, required=True)
    b.add_argument("--regime", choices=("sequential", "parallel", "both"), default="both")
    b.add_argument("--trials", type=int, default=0, help="Monte Carlo trials (0 = skip)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="directory for bias_*.csv and bias.json")

    an = sub.add_parser("analyze", help="statistics report for a price CSV")
    an.add_argument("--input", required=True)
    an.add_argument("--burn-in", type=int, default=500)
    an.add_argument("--lags", type=int, help="ADF lag order (default: Schwert rule)")
    an.add_argument("--out", help="write the JSON report here as well as to stdout")
    return parser


def _spec(args):
    spec = parse_config(args.config)
    cfg_changes = {}
    if getattr(args, "mode", None):
        cfg_changes["mode"] = parse_mode(args.mode)
    if args.seed is not None:
        cfg_changes["seed"] = args.seed
    if cfg_changes:
        spec = replace(spec, config=spec.config.replace(**cfg_changes))
    if args.reps is not None:
        spec = replace(spec, repetitions=args.reps)
    if args.out:
        spec = replace(spec, output_dir=args.out)
    if getattr(args, "emit_trades", False):
        spec = replace(spec, emit_trades=True)
    return spec


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            for path in cmd_simulate(_spec(args)):
                print(path)
        elif args.command == "compare":
            print(json.dumps(cmd_compare(_spec(args))["summary"], indent=2))
        elif args.command == "bias":
            budgets = args.budget * args.traders if len(args.budget) == 1 else args.budget
            report = cmd_bias(budgets, args.price, args.assets, args.regime, args.trials, args.seed, args.out)
            print(json.dumps(report, indent=2))
        elif args.command == "analyze":
            report = cmd_analyze(args.input, args.burn_in, args.lags)
            text = json.dumps(report, indent=2)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text + "\n")
            print(text)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
