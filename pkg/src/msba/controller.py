"""Budget pacing: daily retargeting of the training budget and realtime bonus scaling.

Each day the remaining month budget is spread over the expected remaining
orders, a multiplier schedule is trained for that per-order budget, and during
the day every decided bonus is scaled by a factor that reacts to how far the
day's spend has run ahead of (or behind) its time-prorated target.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError, InvalidArgumentError, OrderArrays, to_minor
from .lddp import DEFAULT_MONEY_UNIT, LddpSolver, MultiplierSchedule, StageDataset, budget_levels
from .online import DEFAULT_GRID_STEP, decide_arrays
from .simulator import SyntheticConfig, calibrate_schedule, generate_orders

LEDGER_HEADER = ["day", "target_budget", "spend", "ratio", "multiplier"]


@dataclass
class PacingState:
    month_budget: float
    spent_to_date: float
    orders_past_30d: float
    expected_future_orders: float
    days_elapsed: int = 0
    days_remaining: int = 0

    def __post_init__(self):
        for name in ("month_budget", "spent_to_date", "orders_past_30d", "expected_future_orders"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {v}")
        if self.days_elapsed < 0 or self.days_remaining < 0:
            raise InvalidArgumentError("day counts must be >= 0")


@dataclass(frozen=True)
class AdjustmentParams:
    high_ratio: float = 1.10
    low_ratio: float = 0.90
    gain_up: float = 1.0
    gain_down: float = 1.0
    m_min: float = 0.2
    m_max: float = 2.0

    def __post_init__(self):
        if not self.low_ratio < 1.0 < self.high_ratio:
            raise ConfigurationError("need low_ratio < 1 < high_ratio")
        if self.gain_up <= 0 or self.gain_down <= 0:
            raise ConfigurationError("gains must be > 0")
        if not 0.0 < self.m_min <= 1.0 <= self.m_max:
            raise ConfigurationError("need 0 < m_min <= 1 <= m_max")


def retarget_daily(state: PacingState) -> float:
    """Training budget for the past-30-day order volume at today's remaining per-order budget."""
    if state.expected_future_orders == 0:
        raise ConfigurationError("expected_future_orders must be > 0 to retarget")
    remaining = max(state.month_budget - state.spent_to_date, 0.0)
    return remaining / state.expected_future_orders * state.orders_past_30d


def realtime_multiplier(spend_ratio: float, params: AdjustmentParams = AdjustmentParams()) -> float:
    if not spend_ratio >= 0:
        raise InvalidArgumentError(f"spend ratio must be >= 0, got {spend_ratio}")
    if spend_ratio < params.low_ratio:
        m = 1.0 + params.gain_up * (params.low_ratio - spend_ratio)
    elif spend_ratio > params.high_ratio:
        m = 1.0 - params.gain_down * (spend_ratio - params.high_ratio)
    else:
        return 1.0
    return min(max(m, params.m_min), params.m_max)


class LddpScheduleSource:
    """Trains (and caches) a calibrated schedule for a per-order budget on a fixed training sample.

    Stage tables are built once for ``max_budget_per_order``; larger requests
    are served at that ceiling.
    """

    def __init__(self, train: OrderArrays, max_budget_per_order: float, money_unit: float = DEFAULT_MONEY_UNIT,
                 grid_step: float = DEFAULT_GRID_STEP, future_scale: str = "survivors", rescale: bool = True):
        if max_budget_per_order <= 0:
            raise ConfigurationError("max budget per order must be > 0")
        self.train = train
        self.money_unit = money_unit
        self.grid_step = grid_step
        self.rescale = rescale
        self.max_budget_per_order = max_budget_per_order
        self.solver = LddpSolver(StageDataset.from_orders(train),
                                 budget_levels(max_budget_per_order * train.n_orders, money_unit),
                                 money_unit, future_scale)
        self._cache: dict[int, MultiplierSchedule] = {}

    def __call__(self, budget_per_order: float) -> MultiplierSchedule:
        bpo = min(max(budget_per_order, 0.0), self.max_budget_per_order)
        key = to_minor(bpo)
        if key not in self._cache:
            budget = key / 100 * self.train.n_orders
            if budget <= 0:
                sched = MultiplierSchedule((self.solver.lam_max,) * self.train.n_stages, money_unit=self.money_unit)
            else:
                _, sched = self.solver.schedule(budget, rescale=self.rescale)
                sched = calibrate_schedule(sched, self.train, budget, self.grid_step)
            self._cache[key] = sched
        return self._cache[key]


@dataclass
class PacedConfig:
    days: int = 30
    orders_per_day: float = 1000.0
    budget_per_order: float = 0.2
    ticks_per_day: int = 24
    shock_day: int | None = None  # 1-based first day of the demand shock
    shock_factor: float = 2.0
    train_orders: int = 2500
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    params: AdjustmentParams = field(default_factory=AdjustmentParams)
    grid_step: float = DEFAULT_GRID_STEP
    money_unit: float = DEFAULT_MONEY_UNIT
    seed: int = 0

    def validate(self) -> None:
        if self.days < 1 or self.ticks_per_day < 1:
            raise ConfigurationError("days and ticks_per_day must be >= 1")
        if self.orders_per_day < 0 or self.budget_per_order < 0:
            raise ConfigurationError("orders_per_day and budget_per_order must be >= 0")
        if self.shock_factor < 0:
            raise ConfigurationError("shock_factor must be >= 0")
        if self.train_orders < 1:
            raise ConfigurationError("train_orders must be >= 1")


@dataclass
class LedgerRow:
    day: int
    target_budget: float
    spend: float
    ratio: float
    multiplier: float
    orders: int = 0
    min_multiplier: float = 1.0


@dataclass
class PacedResult:
    rows: list[LedgerRow]
    month_budget: float

    @property
    def total_spend(self) -> float:
        return float(sum(r.spend for r in self.rows))

    @property
    def final_ratio(self) -> float:
        return self.total_spend / self.month_budget if self.month_budget > 0 else 0.0


def default_schedule_source(cfg: PacedConfig) -> LddpScheduleSource:
    train = generate_orders(SyntheticConfig(**{**cfg.synthetic.__dict__, "n_orders": cfg.train_orders}))
    return LddpScheduleSource(train, max(2.0 * cfg.budget_per_order, cfg.money_unit),
                              cfg.money_unit, cfg.grid_step)


def _realize(orders: OrderArrays, bonus: np.ndarray, rng: np.random.Generator) -> float:
    """One random lifecycle walk per order; returns the bonus paid."""
    p = orders.accept_probs(bonus)
    u = rng.random(bonus.shape)
    waiting = np.ones(orders.n_orders, dtype=bool)
    paid = 0.0
    for t in range(orders.n_stages):
        accepted = waiting & (u[:, t] < p[:, t])
        canceled = waiting & ~accepted & (u[:, t] < p[:, t] + orders.q[:, t])
        paid += float(bonus[accepted, t].sum())
        waiting &= ~(accepted | canceled)
    return paid


def paced_run(cfg: PacedConfig, source=None) -> PacedResult:
    """Closed-loop month: daily retarget and retrain, intraday multiplier, random realizations.

    ``source`` maps a per-order budget to a ``MultiplierSchedule``; by default
    an ``LddpScheduleSource`` on a training sample from ``cfg.synthetic``.
    The expected future volume is the nominal rate (shocks are not forecast).
    """
    cfg.validate()
    month_budget = cfg.budget_per_order * cfg.orders_per_day * cfg.days
    if cfg.orders_per_day == 0:
        return PacedResult([LedgerRow(d, 0.0, 0.0, 0.0, 1.0) for d in range(1, cfg.days + 1)], month_budget)
    if source is None:
        source = default_schedule_source(cfg)

    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.days)
    history = deque([cfg.orders_per_day] * 30, maxlen=30)
    spent = 0.0
    rows = []
    for day in range(1, cfg.days + 1):
        rng = np.random.default_rng(streams[day - 1])
        days_left = cfg.days - day + 1
        state = PacingState(month_budget, spent, float(sum(history)), cfg.orders_per_day * days_left,
                            day - 1, days_left)
        bpo = retarget_daily(state) / state.orders_past_30d
        schedule = source(bpo)
        target = bpo * cfg.orders_per_day

        rate = cfg.orders_per_day
        if cfg.shock_day is not None and day >= cfg.shock_day:
            rate *= cfg.shock_factor
        n_today = int(rng.poisson(rate))
        day_seed = int(rng.integers(2**63 - 1))
        orders = generate_orders(SyntheticConfig(**{**cfg.synthetic.__dict__, "n_orders": n_today,
                                                    "seed": day_seed}))
        lam = np.asarray(schedule.lambdas)[None, :]
        base = decide_arrays(orders.alpha, orders.beta, orders.cap[:, None], lam, cfg.grid_step)[0] \
            if n_today else np.zeros((0, orders.n_stages))
        tick_of = np.sort(rng.integers(cfg.ticks_per_day, size=n_today))

        day_spend = 0.0
        m = m_low = 1.0
        for tick in range(cfg.ticks_per_day):
            if tick > 0 and target > 0:
                m = realtime_multiplier(day_spend / (target * tick / cfg.ticks_per_day), cfg.params)
            elif tick > 0:
                m = cfg.params.m_min if day_spend > 0 else 1.0
            m_low = min(m_low, m)
            idx = np.flatnonzero(tick_of == tick)
            if idx.size == 0:
                continue
            batch = orders.subset(idx)
            bonus = np.minimum(base[idx] * m, batch.cap[:, None])
            day_spend += _realize(batch, bonus, rng)

        spent += day_spend
        history.append(n_today)
        rows.append(LedgerRow(day, target, day_spend, day_spend / target if target > 0 else 0.0, m,
                              n_today, m_low))
    return PacedResult(rows, month_budget)


def write_ledger_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEDGER_HEADER)
        for r in rows:
            writer.writerow([r.day, to_minor(r.target_budget), to_minor(r.spend), f"{r.ratio:.6f}",
                             f"{r.multiplier:.6f}"])
