#!/usr/bin/env python3
"""Desk-scale campaign: screen + feature trust region over several seeds.

Writes one run directory per seed under --out and prints a summary table
(in-band max at x0 and x*, iterations, evaluation cost).
"""

import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from freeform_antenna.config import RunConfig, ScreeningConfig
from freeform_antenna.pipeline import cmd_pipeline

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--N", type=int, help="override the screening count")
    ap.add_argument("--out", default="runs/desk_campaign")
    args = ap.parse_args()

    base = RunConfig.load(args.config)
    print(f"{'seed':>4} {'x0 [dB]':>9} {'x* [dB]':>9} {'gain':>6} {'iters':>5}  cost")
    t0 = time.perf_counter()
    for seed in args.seeds:
        out = Path(args.out) / f"seed{seed}"
        cfg = replace(base, screening=ScreeningConfig(args.N or base.screening.N, seed), output=str(out))
        res = cmd_pipeline(cfg)["results"]["feature"]
        s = json.loads((out / "optimize_feature" / "summary.json").read_text())
        gain = s["initial_minmax_db"] - s["final_minmax_db"]
        print(f"{seed:>4} {s['initial_minmax_db']:>9.3f} {s['final_minmax_db']:>9.3f} {gain:>6.2f} "
              f"{len(res.history):>5}  {s['cost']}")
    print(f"wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
