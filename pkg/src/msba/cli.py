"""Command-line pipeline: gen, fit, train, decide, simulate, paced, report.

Settings come from an optional TOML or JSON config file; command-line flags
override it.  Currency on disk is integer minor units.  Validation failures
exit with status 2 and a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import (ConfigurationError, MsbaError, OrderArrays, read_orders_jsonl,
                   to_minor, write_orders_jsonl)
from .controller import AdjustmentParams, PacedConfig, paced_run, write_ledger_csv
from .fitting import fit_segments, read_curves, read_observations, write_curves, write_observations
from .lddp import DEFAULT_MONEY_UNIT, StageDataset, read_artifact, run_lddp, write_artifact
from .online import DEFAULT_GRID_STEP, decide_arrays
from .simulator import (POLICY_NAMES, REPORT_HEADER, ExperimentConfig, ExperimentRow, SyntheticConfig, build_policy,
                        evaluate_expected, generate_orders, run_experiment, sample_observations, simulate,
                        write_report_csv)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DECISION_HEADER = ["id", "stage", "bonus", "objective_value"]
STAGE_SPEND_HEADER = ["policy", "stage", "spend", "accepted", "canceled"]


@dataclass
class RunConfig:
    seed: int = 0
    budget_per_order: float = 0.2
    stages: int = 8
    money_unit: float = DEFAULT_MONEY_UNIT
    grid_step: float = DEFAULT_GRID_STEP
    n_orders: int = 2500
    out: str | None = None
    orders: str | None = None
    observations: str | None = None
    curves: str | None = None
    schedule: str | None = None
    samples_per_stage: int = 0
    policies: list[str] = field(default_factory=lambda: list(POLICY_NAMES))
    budgets: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4, 0.8])
    stage_counts: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 10])
    trials: int = 0
    future_scale: str = "survivors"
    rescale_backtrack: bool = True
    include_tables: bool = False
    decide_stage: int | None = None
    days: int = 30
    orders_per_day: float = 1000.0
    ticks_per_day: int = 24
    shock_day: int | None = None
    shock_factor: float = 2.0
    controller: dict = field(default_factory=dict)

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigurationError(msg)

        for name in ("budget_per_order", "money_unit", "grid_step", "shock_factor", "orders_per_day"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and math.isfinite(v), f"{name} must be a finite number")
        need(self.budget_per_order >= 0, "budget_per_order must be >= 0")
        need(self.money_unit > 0, "money_unit must be > 0")
        need(self.grid_step > 0, "grid_step must be > 0")
        need(self.stages >= 1, "stages must be >= 1")
        need(self.n_orders >= 0, "n_orders must be >= 0")
        need(self.samples_per_stage >= 0, "samples_per_stage must be >= 0")
        need(self.trials >= 0, "trials must be >= 0")
        need(self.days >= 1 and self.ticks_per_day >= 1, "days and ticks_per_day must be >= 1")
        need(self.orders_per_day >= 0 and self.shock_factor >= 0, "orders_per_day and shock_factor must be >= 0")
        need(all(b >= 0 and math.isfinite(b) for b in self.budgets), "budgets must be finite and >= 0")
        need(all(int(k) >= 1 for k in self.stage_counts), "stage_counts must be >= 1")
        need(self.future_scale in ("survivors", "literal"), "future_scale must be 'survivors' or 'literal'")
        unknown = [p for p in self.policies if p not in POLICY_NAMES]
        need(not unknown, f"unknown policies {unknown}; choose from {list(POLICY_NAMES)}")
        need(self.decide_stage is None or self.decide_stage >= 1, "stage must be >= 1")
        self.adjustment()  # validates controller settings

    def adjustment(self) -> AdjustmentParams:
        allowed = {f.name for f in fields(AdjustmentParams)}
        bad = set(self.controller) - allowed
        if bad:
            raise ConfigurationError(f"unknown controller settings {sorted(bad)}")
        return AdjustmentParams(**self.controller)

    def synthetic(self, n_orders: int | None = None, stages: int | None = None) -> SyntheticConfig:
        return SyntheticConfig(n_orders=self.n_orders if n_orders is None else n_orders,
                               n_stages=self.stages if stages is None else stages, seed=self.seed)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err.strerror}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as err:
        raise ConfigurationError(f"cannot parse config {path}: {err}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a table of settings")
    known = {f.name for f in fields(RunConfig)}
    data = {k.replace("-", "_"): v for k, v in data.items()}
    bad = set(data) - known
    if bad:
        raise ConfigurationError(f"unknown config keys {sorted(bad)}")
    return data


def resolve(args: argparse.Namespace) -> RunConfig:
    settings = load_config(args.config)
    flags = {"seed": args.seed, "budget_per_order": args.budget_per_order, "stages": args.stages,
             "money_unit": args.money_unit, "grid_step": args.grid_step, "out": args.out}
    for key in ("n_orders", "orders", "observations", "curves", "schedule", "trials", "samples_per_stage",
                "decide_stage", "shock_day", "days", "orders_per_day"):
        if hasattr(args, key):
            flags[key] = getattr(args, key)
    if getattr(args, "policies", None):
        flags["policies"] = [p.strip() for p in args.policies.split(",") if p.strip()]
    if getattr(args, "include_tables", False):
        flags["include_tables"] = True
    settings.update({k: v for k, v in flags.items() if v is not None})
    try:
        cfg = RunConfig(**settings)
    except TypeError as err:
        raise ConfigurationError(str(err)) from None
    cfg.validate()
    return cfg


def _need_out(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigurationError("--out is required for this command")
    return Path(cfg.out)


def _load_orders(cfg: RunConfig) -> OrderArrays | None:
    if cfg.orders:
        try:
            return read_orders_jsonl(cfg.orders)
        except OSError as err:
            raise ConfigurationError(f"cannot read orders {cfg.orders}: {err.strerror}") from None
    return generate_orders(cfg.synthetic())


def _with_curves(orders: OrderArrays, curves: dict) -> OrderArrays:
    """Replace each order's (alpha, beta) by its segment's fitted curve where one exists."""
    alpha, beta = orders.alpha.copy(), orders.beta.copy()
    for i, seg in enumerate(orders.segments):
        for t in range(orders.n_stages):
            c = curves.get((seg, t + 1))
            if c is not None:
                alpha[i, t], beta[i, t] = c.alpha, c.beta
    q = np.minimum(orders.q, (1.0 - 1e-9) * (1.0 - 1.0 / (1.0 + np.exp(alpha * orders.cap[:, None] + beta))))
    return OrderArrays(alpha, beta, q, orders.cap, ids=list(orders.ids), segments=list(orders.segments))


# -- commands ----------------------------------------------------------------------

def cmd_gen(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    orders = generate_orders(cfg.synthetic())
    write_orders_jsonl(out, orders)
    if cfg.observations:
        write_observations(cfg.observations, sample_observations(orders, cfg.samples_per_stage or 1, cfg.seed,
                                                                  cfg.grid_step))
    print(f"wrote {orders.n_orders} orders with {orders.n_stages} stages to {out}")
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    if not cfg.observations:
        raise ConfigurationError("fit needs --observations")
    try:
        rows = read_observations(cfg.observations)
    except OSError as err:
        raise ConfigurationError(f"cannot read observations: {err.strerror}") from None
    curves = fit_segments(rows)
    write_curves(out, curves)
    print(f"fitted {len(curves)} segment-stage curves from {len(rows)} observations")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    orders = _load_orders(cfg)
    if orders is None:
        raise ConfigurationError("training needs at least one order")
    if cfg.observations:
        orders = _with_curves(orders, fit_segments(read_observations(cfg.observations)))
    elif cfg.curves:
        orders = _with_curves(orders, read_curves(cfg.curves))
    budget = cfg.budget_per_order * orders.n_orders
    tables, schedule = run_lddp(StageDataset.from_orders(orders), budget, cfg.money_unit, cfg.future_scale,
                                rescale=cfg.rescale_backtrack)
    write_artifact(out, tables, schedule, include_tables=cfg.include_tables)
    print(f"G[1][B] = {tables.value:.6f}")
    for t, (lam, k) in enumerate(zip(schedule.lambdas, schedule.stage_budgets), start=1):
        print(f"stage {t}: lambda = {lam:.6f}, stage budget = {k * cfg.money_unit:.2f}")
    return 0


def cmd_decide(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    if not cfg.schedule:
        raise ConfigurationError("decide needs --schedule")
    _, _, schedule = read_artifact(cfg.schedule)
    orders = read_orders_jsonl(cfg.orders) if cfg.orders else None
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECISION_HEADER)
        if orders is None:
            return 0
        if orders.n_stages != schedule.n_stages:
            raise ConfigurationError(f"orders have {orders.n_stages} stages, schedule has {schedule.n_stages}")
        stages = range(orders.n_stages) if cfg.decide_stage is None else [cfg.decide_stage - 1]
        if cfg.decide_stage is not None and cfg.decide_stage > schedule.n_stages:
            raise ConfigurationError(f"stage {cfg.decide_stage} outside the {schedule.n_stages}-stage schedule")
        for t in stages:
            bonus, value = decide_arrays(orders.alpha[:, t], orders.beta[:, t], orders.cap,
                                         schedule.lambdas[t], cfg.grid_step)
            for oid, b, v in zip(orders.ids, bonus, value):
                writer.writerow([oid, t + 1, to_minor(float(b)), f"{v:.9f}"])
    return 0


def _experiment(cfg: RunConfig, budgets, stage_counts) -> ExperimentConfig:
    return ExperimentConfig(synthetic=cfg.synthetic(), policies=tuple(cfg.policies), budgets_per_order=tuple(budgets),
                            stage_counts=tuple(stage_counts), money_unit=cfg.money_unit, grid_step=cfg.grid_step,
                            future_scale=cfg.future_scale, rescale_backtrack=cfg.rescale_backtrack)


def cmd_simulate(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    orders = _load_orders(cfg)
    rows = []
    if orders is not None and orders.n_orders:
        exp = _experiment(cfg, [cfg.budget_per_order], [orders.n_stages])
        budget = cfg.budget_per_order * orders.n_orders
        for name in cfg.policies:
            policy, param, schedule = build_policy(name, orders, budget, exp)
            outcome = simulate(policy, orders, cfg.seed, cfg.trials) if cfg.trials else evaluate_expected(policy, orders)
            rows.append(ExperimentRow(name, cfg.budget_per_order, orders.n_stages, orders.n_orders, outcome,
                                      cfg.seed, param, schedule))
    write_report_csv(out, rows)
    return 0


def cmd_paced(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    pc = PacedConfig(days=cfg.days, orders_per_day=cfg.orders_per_day, budget_per_order=cfg.budget_per_order,
                     ticks_per_day=cfg.ticks_per_day, shock_day=cfg.shock_day, shock_factor=cfg.shock_factor,
                     synthetic=cfg.synthetic(), params=cfg.adjustment(), grid_step=cfg.grid_step,
                     money_unit=cfg.money_unit, seed=cfg.seed)
    result = paced_run(pc)
    write_ledger_csv(out, result.rows)
    print(f"month spend / budget = {result.final_ratio:.4f}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    out = _need_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    budget_rows = run_experiment(_experiment(cfg, cfg.budgets, [cfg.stages]))
    write_report_csv(out / "policy_budget.csv", budget_rows)
    with open(out / "stage_spend.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STAGE_SPEND_HEADER)
        for r in budget_rows:
            if math.isclose(r.budget_per_order, cfg.budget_per_order):
                o = r.outcome
                for t in range(r.stages):
                    writer.writerow([r.policy, t + 1, to_minor(float(o.per_stage_spend[t])),
                                     f"{o.per_stage_accepted[t]:.6f}", f"{o.per_stage_canceled[t]:.6f}"])
    sweep_cfg = replace(cfg, policies=[p for p in cfg.policies if p in ("none", "msba")] or ["msba"])
    write_report_csv(out / "stage_sweep.csv",
                     run_experiment(_experiment(sweep_cfg, [cfg.budget_per_order], cfg.stage_counts)))
    print(f"wrote policy_budget.csv, stage_spend.csv, stage_sweep.csv to {out}")
    return 0


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "train": cmd_train, "decide": cmd_decide, "simulate": cmd_simulate,
            "paced": cmd_paced, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--budget-per-order", type=float)
    common.add_argument("--stages", type=int)
    common.add_argument("--money-unit", type=float)
    common.add_argument("--grid-step", type=float)
    common.add_argument("--out")

    parser = argparse.ArgumentParser(prog="msba", description="Multi-stage bonus allocation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen", parents=[common], help="write a synthetic orders file")
    p.add_argument("--n-orders", type=int)
    p.add_argument("--observations", help="also write logged observations here")
    p.add_argument("--samples-per-stage", type=int)
    p = sub.add_parser("fit", parents=[common], help="fit per-segment acceptance curves")
    p.add_argument("--observations")
    p = sub.add_parser("train", parents=[common], help="run the dynamic program and write a schedule")
    p.add_argument("--orders")
    p.add_argument("--n-orders", type=int)
    p.add_argument("--observations")
    p.add_argument("--curves")
    p.add_argument("--include-tables", action="store_true")
    p = sub.add_parser("decide", parents=[common], help="bonus per order and stage from a schedule")
    p.add_argument("--orders")
    p.add_argument("--schedule")
    p.add_argument("--stage", dest="decide_stage", type=int)
    p = sub.add_parser("simulate", parents=[common], help="evaluate policies on orders")
    p.add_argument("--orders")
    p.add_argument("--n-orders", type=int)
    p.add_argument("--policies", help="comma-separated subset of " + ",".join(POLICY_NAMES))
    p.add_argument("--trials", type=int, help="Monte Carlo trials (0 = exact expectation)")
    p = sub.add_parser("paced", parents=[common], help="closed-loop month with budget pacing")
    p.add_argument("--days", type=int)
    p.add_argument("--orders-per-day", type=float)
    p.add_argument("--shock-day", type=int)
    p = sub.add_parser("report", parents=[common], help="policy/budget, stage spend and stage-count series")
    p.add_argument("--n-orders", type=int)
    p.add_argument("--policies")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (MsbaError, ValueError, KeyError, IndexError) as err:
        print(f"msba {args.command}: error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"msba {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
