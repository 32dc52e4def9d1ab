"""MSBA expected accepted orders as the same lifecycle is cut into more allocation stages."""

import argparse

from msba.simulator import ExperimentConfig, SyntheticConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-orders", type=int, default=2500)
    ap.add_argument("--stage-counts", default="1,2,4,8,10")
    ap.add_argument("--budget-per-order", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    counts = tuple(int(x) for x in args.stage_counts.split(","))
    cfg = ExperimentConfig(synthetic=SyntheticConfig(n_orders=args.n_orders, seed=args.seed),
                           policies=("none", "msba"), budgets_per_order=(args.budget_per_order,), stage_counts=counts)
    rows = run_experiment(cfg)
    base = {r.stages: r.outcome.expected_accepted for r in rows if r.policy == "none"}
    prev = None
    print(f"{'stages':>6} {'no bonus':>10} {'msba':>10} {'gain':>8}")
    for r in rows:
        if r.policy != "msba":
            continue
        v = r.outcome.expected_accepted
        gain = "" if prev is None else f"{v - prev:>8.2f}"
        print(f"{r.stages:>6} {base[r.stages]:>10.2f} {v:>10.2f} {gain}")
        prev = v


if __name__ == "__main__":
    main()
