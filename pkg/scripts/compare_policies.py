"""Expected accepted, canceled and spend for every policy on one synthetic instance."""

import argparse

from msba.simulator import ExperimentConfig, SyntheticConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-orders", type=int, default=2500)
    ap.add_argument("--stages", type=int, default=8)
    ap.add_argument("--budget-per-order", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = ExperimentConfig(synthetic=SyntheticConfig(n_orders=args.n_orders, n_stages=args.stages, seed=args.seed),
                           budgets_per_order=(args.budget_per_order,), stage_counts=(args.stages,))
    print(f"{'policy':<8} {'accepted':>10} {'canceled':>10} {'spend':>10}  per-stage spend")
    for r in run_experiment(cfg):
        o = r.outcome
        stages = " ".join(f"{x:.1f}" for x in o.per_stage_spend)
        print(f"{r.policy:<8} {o.expected_accepted:>10.2f} {o.expected_canceled:>10.2f} {o.expected_spend:>10.2f}  {stages}")


if __name__ == "__main__":
    main()
