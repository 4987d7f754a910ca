#!/usr/bin/env python3
"""Reproduce the three benchmark comparison tables via delta sweeps.

Runs every tolerance column plus the closed-loop baseline for each bundled
experiment and prints the resulting summary rows.  Expect roughly 15 minutes
of wall time at the full sampling sizes; pass --out to keep the run artifacts.
"""

import argparse
import sys
from pathlib import Path

from mdpc.cli import load_config, run_sweep

ROOT = Path(__file__).resolve().parent.parent
SWEEPS = {
    "test1": [1.0, 0.1, 1e-8],
    "test2": [1.0, 1e-2, 1e-8],
    "test3": [1.0, 1e-1, 1e-9],
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/tables")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--only", choices=sorted(SWEEPS), default=None)
    args = parser.parse_args(argv)
    names = [args.only] if args.only else sorted(SWEEPS)
    for name in names:
        cfg = load_config(ROOT / "configs" / f"{name}.cfg")
        deltas = SWEEPS[name]
        runs = run_sweep(cfg, deltas, jobs=args.jobs, out_dir=Path(args.out) / name)
        print(f"\n{name}: tolerance sweep (last row = closed loop)")
        print(f"{'delta':>10} {'updates':>9} {'sigma2(T)':>12} {'J':>9}")
        labels = [f"{d:g}" for d in deltas] + ["closed"]
        for label, run in zip(labels, runs):
            print(
                f"{label:>10} {run.update_fraction:>8.0%} "
                f"{run.final_sigma2:>12.4e} {run.cost_j:>9.4f}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
