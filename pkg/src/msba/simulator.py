"""Policy evaluation, baselines, and the synthetic offline-comparison harness."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.special import expit, log_expit

from .core import ALPHA_EPS, ConfigurationError, InvalidArgumentError, OrderArrays, survival_before
from .lddp import DEFAULT_MONEY_UNIT, LddpSolver, MultiplierSchedule, StageDataset, budget_levels
from .online import DEFAULT_GRID_STEP, decide_arrays
from .single_stage import StageProblem, solve


# -- policies ---------------------------------------------------------------------

@dataclass(frozen=True)
class NoBonus:
    name: str = "none"


@dataclass(frozen=True)
class Unified:
    """The same flat bonus for every order from ``trigger_stage`` on (capped per order)."""

    bonus: float
    trigger_stage: int = 1
    name: str = "unified"


@dataclass(frozen=True)
class SingleStage:
    """One multiplier shared by every stage, decided on the bonus grid."""

    lam: float
    grid_step: float = DEFAULT_GRID_STEP
    name: str = "single"


@dataclass(frozen=True)
class Msba:
    schedule: MultiplierSchedule
    grid_step: float = DEFAULT_GRID_STEP
    name: str = "msba"


@dataclass(frozen=True)
class Fixed:
    """Explicit ``(n_orders, n_stages)`` bonus plan."""

    bonuses: tuple
    name: str = "fixed"


Policy = Union[NoBonus, Unified, SingleStage, Msba, Fixed]


def bonus_matrix(policy: Policy, orders: OrderArrays) -> np.ndarray:
    """Bonus each order would be shown at each stage if it got there."""
    shape = orders.alpha.shape
    cap = orders.cap[:, None]
    if isinstance(policy, NoBonus):
        return np.zeros(shape)
    if isinstance(policy, Unified):
        if policy.bonus < 0:
            raise ConfigurationError("unified bonus must be >= 0")
        active = np.arange(1, orders.n_stages + 1) >= policy.trigger_stage
        return np.where(active[None, :], np.minimum(policy.bonus, cap), 0.0)
    if isinstance(policy, SingleStage):
        return decide_arrays(orders.alpha, orders.beta, cap, policy.lam, policy.grid_step)[0]
    if isinstance(policy, Msba):
        if policy.schedule.n_stages != orders.n_stages:
            raise ConfigurationError(
                f"schedule has {policy.schedule.n_stages} stages, orders have {orders.n_stages}"
            )
        lam = np.asarray(policy.schedule.lambdas)[None, :]
        return decide_arrays(orders.alpha, orders.beta, cap, lam, policy.grid_step)[0]
    if isinstance(policy, Fixed):
        c = np.asarray(policy.bonuses, dtype=float)
        if c.shape != shape:
            raise ConfigurationError(f"fixed plan shape {c.shape} does not match orders {shape}")
        if np.any(c < 0) or np.any(c > cap + 1e-9):
            raise ConfigurationError("fixed plan bonuses must lie in [0, cap]")
        return c
    raise ConfigurationError(f"unresolvable policy {policy!r}")


# -- evaluation -------------------------------------------------------------------

@dataclass
class PolicyOutcome:
    n_orders: int
    expected_accepted: float
    expected_canceled: float
    expected_spend: float
    per_stage_accepted: np.ndarray
    per_stage_spend: np.ndarray
    per_stage_canceled: np.ndarray
    forced_canceled: float
    # Monte Carlo only: standard errors of the three totals, trial count and seed
    stderr: dict | None = None
    trials: int = 0
    seed: int | None = None


def evaluate_expected(policy: Policy, orders: OrderArrays) -> PolicyOutcome:
    c = bonus_matrix(policy, orders)
    p = orders.accept_probs(c)
    alive = survival_before(p, orders.q)
    acc = (alive * p).sum(axis=0)
    spend = (alive * p * c).sum(axis=0)
    canc = (alive * orders.q).sum(axis=0)
    forced = float((alive[:, -1] * np.clip(1.0 - p[:, -1] - orders.q[:, -1], 0.0, 1.0)).sum())
    return PolicyOutcome(
        n_orders=orders.n_orders,
        expected_accepted=float(acc.sum()),
        expected_canceled=float(canc.sum()) + forced,
        expected_spend=float(spend.sum()),
        per_stage_accepted=acc,
        per_stage_spend=spend,
        per_stage_canceled=canc,
        forced_canceled=forced,
    )


def simulate(policy: Policy, orders: OrderArrays, seed: int, trials: int = 100) -> PolicyOutcome:
    """Monte Carlo lifecycle walk; each trial draws from its own seeded stream."""
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    c = bonus_matrix(policy, orders)
    p = orders.accept_probs(c)
    accept_edge = p
    cancel_edge = p + orders.q
    n, T = c.shape
    acc_tot = np.empty(trials)
    canc_tot = np.empty(trials)
    spend_tot = np.empty(trials)
    stage_acc = np.zeros(T)
    stage_spend = np.zeros(T)
    stage_canc = np.zeros(T)
    forced = 0.0
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        u = np.random.default_rng(child).random((n, T))
        waiting = np.ones(n, dtype=bool)
        a_count = s_total = c_count = 0.0
        for t in range(T):
            accepted = waiting & (u[:, t] < accept_edge[:, t])
            canceled = waiting & ~accepted & (u[:, t] < cancel_edge[:, t])
            na, nc = accepted.sum(), canceled.sum()
            paid = c[accepted, t].sum()
            stage_acc[t] += na
            stage_canc[t] += nc
            stage_spend[t] += paid
            a_count += na
            c_count += nc
            s_total += paid
            waiting &= ~(accepted | canceled)
        nf = waiting.sum()
        forced += nf
        acc_tot[k], canc_tot[k], spend_tot[k] = a_count, c_count + nf, s_total

    def se(x):
        return float(x.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan

    return PolicyOutcome(
        n_orders=n,
        expected_accepted=float(acc_tot.mean()),
        expected_canceled=float(canc_tot.mean()),
        expected_spend=float(spend_tot.mean()),
        per_stage_accepted=stage_acc / trials,
        per_stage_spend=stage_spend / trials,
        per_stage_canceled=stage_canc / trials,
        forced_canceled=forced / trials,
        stderr={"accepted": se(acc_tot), "canceled": se(canc_tot), "spend": se(spend_tot)},
        trials=trials,
        seed=seed,
    )


# -- budget calibration -----------------------------------------------------------

def calibrate_unified(orders: OrderArrays, budget: float, step: float = 0.01, trigger_stage: int = 1) -> float:
    """Largest flat bonus (to within ``step``) whose expected spend fits the budget."""
    if budget < 0:
        raise InvalidArgumentError("budget must be >= 0")
    hi = float(orders.cap.max(initial=0.0))
    if evaluate_expected(Unified(hi, trigger_stage), orders).expected_spend <= budget:
        return hi
    lo = 0.0
    while hi - lo > step:
        mid = 0.5 * (lo + hi)
        if evaluate_expected(Unified(mid, trigger_stage), orders).expected_spend <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def _calibrate_scale(spend_of, budget: float, lo: float, hi: float, iters: int = 60) -> float:
    """Smallest positive scale (log-bisection) whose spend fits the budget; spend falls as scale grows."""
    if spend_of(lo) <= budget:
        return lo
    if spend_of(hi) > budget:
        return hi
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if spend_of(mid) <= budget:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_single_stage(orders: OrderArrays, budget: float, grid_step: float = DEFAULT_GRID_STEP) -> float:
    """Shared multiplier whose whole-lifecycle expected spend fits the budget."""
    return _calibrate_scale(
        lambda lam: evaluate_expected(SingleStage(lam, grid_step), orders).expected_spend,
        budget, 1e-6, 1e4,
    )


def pooled_single_stage_lambda(orders: OrderArrays, budget: float) -> float:
    """Multiplier from one single-stage solve on the stage-1 population with the full budget."""
    problem = StageProblem(orders.alpha[:, 0], orders.beta[:, 0], orders.cap, budget)
    return solve(problem).lam


def calibrate_schedule(schedule: MultiplierSchedule, orders: OrderArrays, budget: float,
                       grid_step: float = DEFAULT_GRID_STEP) -> MultiplierSchedule:
    """Rescale every stage multiplier by one common factor so lifecycle spend fits the budget."""
    if not any(schedule.lambdas):
        return schedule
    factor = _calibrate_scale(
        lambda k: evaluate_expected(Msba(schedule.scaled(k), grid_step), orders).expected_spend,
        budget, 1e-4, 1e4,
    )
    return schedule.scaled(factor)


# -- synthetic instances ----------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Synthetic orders on a continuous lifecycle cut into equal allocation stages.

    The lifecycle is split into ``reference_stages`` equal windows.  Each order
    draws a zero-bonus logit ``beta`` (one per order, or one per window with
    ``beta_per_window``) plus a common upward drift of ``beta_trend`` from the
    first window to the last, and a cancellation probability ``q`` per window.
    Within a window these become constant competing acceptance and
    cancellation hazards.  Cutting the lifecycle into ``n_stages`` windows
    integrates those hazards exactly, so the zero-bonus outcome of every order
    is the same for any stage count, and ``n_stages == reference_stages``
    reproduces the drawn ``beta`` and ``q`` exactly.  The bonus slope is
    per order.
    """

    n_orders: int = 2500
    n_stages: int = 8
    lifecycle: float = 48.0
    reference_stages: int = 8
    alpha_range: tuple[float, float] = (-2.0, -0.2)
    beta_range: tuple[float, float] = (-3.0, 3.0)
    cancel_range: tuple[float, float] = (0.0, 0.05)
    caps: tuple[float, ...] = (3.0, 4.0, 5.0)
    n_cities: int = 4
    n_dayparts: int = 3
    beta_trend: float = 2.0
    beta_per_window: bool = False
    seed: int = 0


def _latent_orders(cfg: SyntheticConfig):
    rng = np.random.default_rng(cfg.seed)
    n, R = cfg.n_orders, cfg.reference_stages
    lo, hi = sorted(cfg.alpha_range)
    a = -rng.uniform(lo, hi, size=n)  # slope magnitude |alpha|
    cap = rng.choice(np.asarray(cfg.caps, dtype=float), size=n)
    city = rng.integers(cfg.n_cities, size=n)
    part = rng.integers(cfg.n_dayparts, size=n)
    beta_ref = rng.uniform(*cfg.beta_range, size=(n, R if cfg.beta_per_window else 1))
    # acceptance slows as an order ages: the logit drifts up by beta_trend over the lifecycle
    beta_ref = beta_ref + cfg.beta_trend * np.linspace(0.0, 1.0, R)
    q_ref = rng.uniform(*cfg.cancel_range, size=(n, R))
    return a, beta_ref, q_ref, cap, city, part


def _window_outcomes(h, kappa, edges_ref, edges):
    """Accept/cancel probabilities per target window under piecewise-constant hazards."""
    n, K = h.shape[0], len(edges) - 1
    p0 = np.zeros((n, K))
    q = np.zeros((n, K))
    for k in range(K):
        s, e = edges[k], edges[k + 1]
        alive = np.ones(n)
        for j in range(len(edges_ref) - 1):
            d = min(e, edges_ref[j + 1]) - max(s, edges_ref[j])
            if d <= 0:
                continue
            rate = h[:, j] + kappa[:, j]
            leave = -np.expm1(-rate * d)
            with np.errstate(invalid="ignore", divide="ignore"):
                share = np.where(rate > 0, h[:, j] / rate, 0.0)
            p0[:, k] += alive * leave * share
            q[:, k] += alive * leave * (1.0 - share)
            alive = alive * (1.0 - leave)
    return p0, q


def generate_orders(cfg: SyntheticConfig) -> OrderArrays:
    if cfg.n_orders < 0 or cfg.n_stages < 1 or cfg.reference_stages < 1:
        raise ConfigurationError("need n_orders >= 0 and n_stages, reference_stages >= 1")
    if cfg.lifecycle <= 0:
        raise ConfigurationError("lifecycle must be > 0")
    a, beta_ref, q_ref, cap, city, part = _latent_orders(cfg)
    n, K, L, R = cfg.n_orders, cfg.n_stages, cfg.lifecycle, cfg.reference_stages

    p_ref = expit(-beta_ref)
    q_ref = np.minimum(q_ref, (1.0 - p_ref) * (1.0 - 1e-6))
    rate = -np.log1p(-(p_ref + q_ref)) / (L / R)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(p_ref + q_ref > 0, p_ref / (p_ref + q_ref), 1.0)
    p0, q = _window_outcomes(rate * share, rate * (1.0 - share), np.linspace(0.0, L, R + 1),
                             np.linspace(0.0, L, K + 1))

    p0 = np.clip(p0, 1e-9, 1 - 1e-9)
    q = np.clip(q, 0.0, (1.0 - p0) * (1.0 - 1e-9))
    beta = np.log1p(-p0) - np.log(p0)
    # p(cap) + q <= 1 keeps each stage transition a distribution; flatten the
    # slope where needed rather than touching the zero-bonus probabilities
    with np.errstate(divide="ignore"):
        room = (np.log1p(-q) - np.log(q) + beta) * (1.0 - 1e-9)
        steepest = np.where(cap[:, None] > 0, room / np.maximum(cap[:, None], 1e-300), np.inf)
    alpha = -np.maximum(np.minimum(a[:, None], steepest), ALPHA_EPS)
    # where even the flattest admissible slope overshoots, trim q instead
    q = np.minimum(q, -np.expm1(log_expit(-(alpha * cap[:, None] + beta))))
    segments = [f"city{c}-part{d}" for c, d in zip(city, part)]
    return OrderArrays(alpha, beta, q, cap, ids=[f"o{i}" for i in range(n)], segments=segments)


# -- experiment harness -----------------------------------------------------------

POLICY_NAMES = ("none", "unified", "single", "msba")
REPORT_HEADER = ["policy", "budget_per_order", "stages", "expected_accepted", "expected_canceled",
                 "expected_spend", "seed"]


@dataclass
class ExperimentConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    policies: tuple[str, ...] = POLICY_NAMES
    budgets_per_order: tuple[float, ...] = (0.2,)
    stage_counts: tuple[int, ...] = (8,)
    money_unit: float = DEFAULT_MONEY_UNIT
    grid_step: float = DEFAULT_GRID_STEP
    future_scale: str = "survivors"
    rescale_backtrack: bool = True
    calibrate_msba: bool = True
    single_stage_mode: str = "calibrated"


@dataclass
class ExperimentRow:
    policy: str
    budget_per_order: float
    stages: int
    n_orders: int
    outcome: PolicyOutcome
    seed: int
    param: float | None = None
    schedule: MultiplierSchedule | None = None

    def record(self) -> dict:
        from .core import to_minor

        return {
            "policy": self.policy,
            "budget_per_order": to_minor(self.budget_per_order),
            "stages": self.stages,
            "expected_accepted": f"{self.outcome.expected_accepted:.6f}",
            "expected_canceled": f"{self.outcome.expected_canceled:.6f}",
            "expected_spend": to_minor(self.outcome.expected_spend),
            "seed": self.seed,
        }


def build_policy(name: str, orders: OrderArrays, budget: float, cfg: ExperimentConfig,
                 solver: LddpSolver | None = None) -> tuple[Policy, float | None, MultiplierSchedule | None]:
    """Instantiate and budget-calibrate one named policy for an instance."""
    if name == "none":
        return NoBonus(), None, None
    if name == "unified":
        c = calibrate_unified(orders, budget)
        return Unified(c), c, None
    if name == "single":
        if cfg.single_stage_mode == "pooled":
            lam = pooled_single_stage_lambda(orders, budget)
        elif cfg.single_stage_mode == "calibrated":
            lam = calibrate_single_stage(orders, budget, cfg.grid_step)
        else:
            raise ConfigurationError(f"unknown single-stage mode {cfg.single_stage_mode!r}")
        return SingleStage(lam, cfg.grid_step), lam, None
    if name == "msba":
        if solver is None:
            solver = LddpSolver(StageDataset.from_orders(orders), budget_levels(budget, cfg.money_unit),
                                cfg.money_unit, cfg.future_scale)
        _, schedule = solver.schedule(budget, rescale=cfg.rescale_backtrack)
        if cfg.calibrate_msba:
            schedule = calibrate_schedule(schedule, orders, budget, cfg.grid_step)
        return Msba(schedule, cfg.grid_step), None, schedule
    raise ConfigurationError(f"unknown policy {name!r}")


def run_experiment(cfg: ExperimentConfig) -> list[ExperimentRow]:
    for name in cfg.policies:
        if name not in POLICY_NAMES:
            raise ConfigurationError(f"unknown policy {name!r}")
    if any(b < 0 for b in cfg.budgets_per_order):
        raise ConfigurationError("budgets must be >= 0")
    rows = []
    for stages in cfg.stage_counts:
        syn = SyntheticConfig(**{**asdict(cfg.synthetic), "n_stages": stages})
        orders = generate_orders(syn)
        n = orders.n_orders
        solver = None
        if "msba" in cfg.policies and n:
            top = max(cfg.budgets_per_order) * n
            solver = LddpSolver(StageDataset.from_orders(orders), budget_levels(top, cfg.money_unit),
                                cfg.money_unit, cfg.future_scale)
        for bpo in cfg.budgets_per_order:
            for name in cfg.policies:
                policy, param, schedule = build_policy(name, orders, bpo * n, cfg, solver)
                rows.append(ExperimentRow(name, bpo, stages, n, evaluate_expected(policy, orders),
                                          syn.seed, param, schedule))
    return rows


def write_report_csv(path, rows: Iterable[ExperimentRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.record())


def sample_observations(orders: OrderArrays, samples_per_stage: int = 1, seed: int = 0,
                        step: float = DEFAULT_GRID_STEP) -> list[tuple[str, int, float, bool]]:
    """Logged ``(segment, stage, bonus, accepted)`` rows: random grid bonuses, Bernoulli outcomes."""
    if samples_per_stage < 0 or step <= 0:
        raise InvalidArgumentError("samples_per_stage must be >= 0 and step > 0")
    rng = np.random.default_rng(seed)
    rows = []
    n, T = orders.alpha.shape
    for _ in range(samples_per_stage):
        levels = np.floor(orders.cap / step + 1e-9).astype(int)
        c = rng.integers(0, levels[:, None] + 1, size=(n, T)) * step
        accepted = rng.random((n, T)) < orders.accept_probs(c)
        for i in range(n):
            for t in range(T):
                rows.append((orders.segments[i], t + 1, float(c[i, t]), bool(accepted[i, t])))
    return rows
