"""Relative gap between the dynamic-program value and the brute-force joint optimum on tiny instances.

Optionally repeats each instance at finer money units to show how much of
the gap is budget discretization.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
import oracles  # noqa: E402

from msba.core import OrderArrays  # noqa: E402
from msba.lddp import StageDataset, run_lddp  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--money-unit", type=float, default=0.1)
    ap.add_argument("--finer", default="", help="comma-separated finer money units to retry the worst instances")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    cases = []
    for _ in range(args.instances):
        n, T = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        a, b = -rng.uniform(0.2, 2.0, (n, T)), rng.uniform(-3.0, 3.0, (n, T))
        cap = rng.choice([3.0, 4.0, 5.0], n)
        q = np.minimum(rng.uniform(0.0, 0.05, (n, T)), 1.0 - oracles.accept(a, b, cap[:, None]))
        budget = int(rng.integers(0, 7)) * args.money_unit
        orders = OrderArrays(a, b, q, cap)
        value = run_lddp(StageDataset.from_orders(orders), budget, args.money_unit)[0].value
        opt = oracles.multi_stage_optimum(a, b, q, cap, budget)
        cases.append(((value - opt) / opt, orders, budget, opt))
    err = np.array([abs(c[0]) for c in cases])
    print(f"instances {len(err)}: median {np.median(err):.4%}, p90 {np.quantile(err, 0.9):.4%}, "
          f"p99 {np.quantile(err, 0.99):.4%}, max {err.max():.4%}, share above 5% {(err > 0.05).mean():.2%}")
    units = [float(u) for u in args.finer.split(",") if u]
    for gap, orders, budget, opt in sorted(cases, key=lambda c: c[0])[:5] if units else []:
        vals = [run_lddp(StageDataset.from_orders(orders), budget, u)[0].value for u in units]
        print(f"gap {gap:+.4%} at unit {args.money_unit}; " + ", ".join(
            f"unit {u}: {(v - opt) / opt:+.4%}" for u, v in zip(units, vals)))


if __name__ == "__main__":
    main()
