"""Accepted orders and cancellations per policy across budgets, with the MSBA-over-unified gap."""

import argparse

from msba.simulator import ExperimentConfig, SyntheticConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-orders", type=int, default=2500)
    ap.add_argument("--stages", type=int, default=8)
    ap.add_argument("--budgets", default="0.05,0.1,0.2,0.4,0.8", help="comma-separated budgets per order")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    budgets = tuple(float(x) for x in args.budgets.split(","))
    cfg = ExperimentConfig(synthetic=SyntheticConfig(n_orders=args.n_orders, n_stages=args.stages, seed=args.seed),
                           budgets_per_order=budgets, stage_counts=(args.stages,))
    rows = {(r.policy, r.budget_per_order): r.outcome for r in run_experiment(cfg)}
    names = ("none", "unified", "single", "msba")
    print(f"{'budget':>7} " + " ".join(f"{n + ' acc':>12}" for n in names)
          + " " + " ".join(f"{n + ' canc':>13}" for n in names) + f" {'msba-unified':>13}")
    for b in budgets:
        acc = [rows[(n, b)].expected_accepted for n in names]
        canc = [rows[(n, b)].expected_canceled for n in names]
        print(f"{b:>7.2f} " + " ".join(f"{x:>12.2f}" for x in acc) + " "
              + " ".join(f"{x:>13.2f}" for x in canc) + f" {acc[3] - acc[1]:>13.2f}")


if __name__ == "__main__":
    main()
