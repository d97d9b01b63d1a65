"""W1 distance between VaR-Q-learning iterates and the soft-quantile DP fixed point.

    python scripts/qlearning_curve.py --kappa 1e-4 --sweeps 20000
"""

import argparse
import os

import numpy as np

from varq.cli import write_report
from varq.mdp import gen_random_mdp
from varq.qlearn import TrainConfig, default_target, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--S", type=int, default=5)
    ap.add_argument("--A", type=int, default=2)
    ap.add_argument("--mdp-seed", type=int, default=0)
    ap.add_argument("--J", type=int, default=32)
    ap.add_argument("--T", type=int, default=8)
    ap.add_argument("--kappa", type=float, default=1e-4)
    ap.add_argument("--sweeps", type=int, default=20_000)
    ap.add_argument("--schedule", choices=["geometric", "harmonic"], default="geometric")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=10)
    ap.add_argument("--out", default="out/qlearning")
    args = ap.parse_args()

    mdp = gen_random_mdp(args.mdp_seed, args.S, args.A, 2)
    cfg = TrainConfig(J=args.J, T=args.T, kappa=args.kappa, sweeps=args.sweeps, seed=args.seed,
                      schedule=args.schedule)
    target = default_target(mdp, cfg)
    res = train(mdp, cfg, target, record_every=args.every)

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"w1_kappa{args.kappa:g}_seed{args.seed}.csv")
    write_report(res.diagnostics, path, ["sweep", "w1"])
    w1 = np.array([w for _, w in res.diagnostics])
    print(f"final W1 {w1[-1]:.4f}, tolerance {1e-2 * (mdp.r_max - mdp.r_min) * args.T:.4f}")

    # error by time slice and risk level, to see where the iterate lags the target
    err = np.abs(res.q.values - target.values).max(axis=(1, 3))
    for t in range(1, args.T + 1):
        worst = int(err[t].argmax())
        print(f"t={t}: max error {err[t].max():.4f} at j={worst}")
    print(path)


if __name__ == "__main__":
    main()
