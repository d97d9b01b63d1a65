"""Width of the lower/upper VaR bracket on gambler's ruin as the risk grid is refined.

    python scripts/gap_study.py --T 10 --out out/gap
"""

import argparse
import os

import numpy as np

from varq.cli import write_report
from varq.dp import RiskGrid, solve_var_dp
from varq.mdp import gen_gamblers_ruin


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=10)
    ap.add_argument("--grids", default="16,64,256,1024,4096")
    ap.add_argument("--capital", type=int, default=7)
    ap.add_argument("--win", type=float, default=0.7)
    ap.add_argument("--out", default="out/gap")
    args = ap.parse_args()

    mdp = gen_gamblers_ruin(args.capital, args.win)
    grids = [int(g) for g in args.grids.split(",")]
    coarse = min(grids)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for J in grids:
        shared = np.arange(coarse) * (J // coarse)
        lo = solve_var_dp(mdp, RiskGrid(J), args.T, "lower").values[args.T]
        up = solve_var_dp(mdp, RiskGrid(J), args.T, "upper").values[args.T]
        gap = (up - lo)[:, shared]
        rows.append((J, float(gap.max()), float(gap.mean())))
        print(f"J={J:5d}  max gap {gap.max():.5f}  mean gap {gap.mean():.5f}")
    write_report(rows, os.path.join(args.out, "gap_by_grid.csv"), ["J", "max_gap", "mean_gap"])


if __name__ == "__main__":
    main()
