"""Empirical quantiles of the VaR policy against risk-neutral, nested-VaR and
distributional-VaR policies on the slippery cliff walk.

    python scripts/baseline_comparison.py --J 4096 --episodes 10000
"""

import argparse
import os

from varq.cli import baseline_policies, parse_config
from varq.dp import RiskGrid, solve_var_dp
from varq.policy import evaluate_policy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--domain", default="cliffwalk")
    ap.add_argument("--alpha0", type=float, default=0.25)
    ap.add_argument("--J", type=int, default=4096)
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--episodes", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/baselines")
    args = ap.parse_args()

    cfg = parse_config(["--domain", args.domain, "--alpha0", str(args.alpha0), "--J", str(args.J),
                        "--T", str(args.T), "--seed", str(args.seed)])
    mdp, s0 = cfg.build_mdp(), cfg.start_state()
    os.makedirs(args.out, exist_ok=True)
    alphas = [args.alpha0]

    q = solve_var_dp(mdp, RiskGrid(args.J), args.T, "lower")
    reports = {"VaR": evaluate_policy(mdp, "var", q, s0, args.T, alphas, args.episodes, args.seed)}
    for name, table in baseline_policies(mdp, cfg).items():
        reports[name] = evaluate_policy(mdp, "markov", table, s0, args.T, alphas, args.episodes, args.seed)

    bound = q.values[args.T][s0, q.grid.index(args.alpha0)].max()
    print(f"lower bound from the table: {bound:.4f}")
    for name, rep in reports.items():
        row = rep.rows[0]
        print(f"{name:5s} {args.alpha0:.2f}-quantile {row.point:9.4f}  99% CI [{row.ci_lo:.4f}, {row.ci_hi:.4f}]")
        with open(os.path.join(args.out, f"eval_{name}.csv"), "w", newline="") as fh:
            fh.write(rep.to_csv())


if __name__ == "__main__":
    main()
