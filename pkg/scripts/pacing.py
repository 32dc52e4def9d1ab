"""Closed-loop months under the pacing controller: end-of-month spend ratio per seed, then a demand shock."""

import argparse

from msba.controller import PacedConfig, default_schedule_source, paced_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--budget-per-order", type=float, default=0.2)
    ap.add_argument("--orders-per-day", type=float, default=1000.0)
    ap.add_argument("--shock-day", type=int, default=16)
    ap.add_argument("--shock-factor", type=float, default=2.0)
    args = ap.parse_args()
    base = PacedConfig(budget_per_order=args.budget_per_order, orders_per_day=args.orders_per_day)
    source = default_schedule_source(base)
    for seed in range(args.seeds):
        r = paced_run(PacedConfig(**{**base.__dict__, "seed": seed}), source)
        print(f"seed {seed:>2}: spend/budget {r.final_ratio:.4f}")
    shocked = paced_run(PacedConfig(**{**base.__dict__, "shock_day": args.shock_day,
                                       "shock_factor": args.shock_factor}), source)
    print(f"shock x{args.shock_factor} from day {args.shock_day}: spend/budget {shocked.final_ratio:.4f}")
    print(f"{'day':>4} {'orders':>7} {'target':>9} {'spend':>9} {'ratio':>6} {'min mult':>9}")
    for row in shocked.rows:
        print(f"{row.day:>4} {row.orders:>7} {row.target_budget:>9.1f} {row.spend:>9.1f} {row.ratio:>6.2f} "
              f"{row.min_multiplier:>9.2f}")


if __name__ == "__main__":
    main()
