"""Command-line entry point: ``freeform-antenna <command> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import RunConfig
from .errors import AntennaDesignError
from .pipeline import cmd_optimize, cmd_pipeline, cmd_plotdata, cmd_screen, reference_cost_check

log = logging.getLogger("freeform_antenna")


def _common(p):
    p.add_argument("--config", help="JSON run configuration (flags override its values)")
    p.add_argument("--seed", type=int, help="root seed for candidate generation")
    p.add_argument("--evaluator", help="'synthetic' or 'cmd:PATH' (external solver program)")
    p.add_argument("--objective", choices=("feature", "minmax"), help="optimization objective")
    p.add_argument("--workers", type=int, help="parallel evaluator calls")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="freeform-antenna",
        description="Screen random free-form patch antennas and tune the best one with a feature-based trust region.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("screen", help="generate, evaluate and rank random candidates")
    _common(p)
    p = sub.add_parser("optimize", help="trust-region optimization from an initial design")
    _common(p)
    p.add_argument("--x0", help="initial design file (default: <out>/screen/x0.txt)")
    p = sub.add_parser("pipeline", help="screen, then optimize the selected design")
    _common(p)
    p.add_argument("--compare", action="store_true", help="also run the min-max benchmark from the same start")
    p = sub.add_parser("plotdata", help="emit plot-ready CSVs for a finished run (cache only)")
    _common(p)
    p = sub.add_parser("validate-config", help="check a configuration and print it normalized")
    _common(p)
    return parser


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, evaluator=args.evaluator, objective=args.objective,
                              workers=args.workers, output=args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        if args.command == "validate-config":
            sys.stdout.write(cfg.to_json())
            print(reference_cost_check())
        elif args.command == "screen":
            result = cmd_screen(cfg)
            idx, score, _ = result.ranked[0]
            print(f"screened {len(result.ranked)} candidates; best index {idx} at {score:.3f} dB")
        elif args.command == "optimize":
            res = cmd_optimize(cfg, args.x0)
            print(f"{res.kind}: U {res.initial_objective:.6g} -> {res.final_objective:.6g} "
                  f"after {len(res.history)} iterations ({res.termination_reason})")
        elif args.command == "pipeline":
            out = cmd_pipeline(cfg, compare=args.compare)
            for kind, res in out["results"].items():
                print(f"{kind}: U {res.initial_objective:.6g} -> {res.final_objective:.6g} "
                      f"after {len(res.history)} iterations ({res.termination_reason})")
        elif args.command == "plotdata":
            files = cmd_plotdata(args.out or cfg.output)
            print(f"wrote {len(files)} files")
    except AntennaDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
