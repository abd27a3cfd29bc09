#!/usr/bin/env python3
"""Feature-based vs min-max trust region from the same starting design.

Runs the pipeline with both objectives per seed, optionally with every
quality factor replaced by --q (narrow dips), and prints the final in-band
maximum reflection of each.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from freeform_antenna.config import RunConfig
from freeform_antenna.pipeline import cmd_pipeline

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--q", type=float, default=60.0, help="quality factor for every mode (0 keeps the config)")
    ap.add_argument("--out", default="runs/comparison")
    args = ap.parse_args()

    base = RunConfig.load(args.config)
    if args.q:
        base = replace(base, evaluator=replace(base.evaluator, synthetic=base.evaluator.synthetic.narrow(args.q)))
    print("seed,x0_minmax_db,feature_final_minmax_db,benchmark_final_minmax_db,feature_wins")
    wins = 0
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}"
        cmd_pipeline(replace(base, screening=replace(base.screening, seed=seed), output=str(out)), compare=True)
        row = (out / "compare.csv").read_text().splitlines()[1].split(",")
        win = float(row[2]) <= float(row[3])
        wins += win
        print(f"{row[0]},{float(row[1]):.4f},{float(row[2]):.4f},{float(row[3]):.4f},{int(win)}")
    print(f"feature-based at least as good on {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
