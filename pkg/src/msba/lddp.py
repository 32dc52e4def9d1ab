"""Offline dynamic program over (stage, money level).

Stage tables ``g[t][b]`` / ``lam[t][b]`` come from single-stage dual solves on
the orders that reach stage ``t`` without earlier bonuses.  The recursion
combines them, approximating the survivors after spending ``k`` at stage
``t`` by a uniformly rescaled copy of the stage ``t+1`` population (one
dimensional projection), and the backtrack reads off one multiplier per stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .core import InvalidArgumentError, OrderArrays, survival_before
from .single_stage import LAMBDA_MAX, StageProblem, solve_budgets

DEFAULT_MONEY_UNIT = 0.1

# floor((b - k) / r) must not lose a level when r is 1 up to round-off
_INDEX_SLACK = 1e-9


@dataclass
class StageSet:
    alpha: np.ndarray
    beta: np.ndarray
    cap: np.ndarray
    q: np.ndarray
    weight: np.ndarray

    @property
    def size(self) -> float:
        return float(self.weight.sum())

    @property
    def cancel_mass(self) -> float:
        return float(np.dot(self.weight, self.q))

    def problem(self, budget: float = 0.0) -> StageProblem:
        return StageProblem(self.alpha, self.beta, self.cap, budget, self.weight)


@dataclass
class StageDataset:
    """Per-stage surviving order sets ``N_t`` with their cancellation mass ``Q_t``."""

    stages: list[StageSet]

    def __post_init__(self):
        if not self.stages:
            raise InvalidArgumentError("dataset needs at least one stage")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.stages])

    @property
    def cancel_mass(self) -> np.ndarray:
        return np.array([s.cancel_mass for s in self.stages])

    @classmethod
    def from_orders(cls, orders: OrderArrays, min_weight: float = 0.0) -> "StageDataset":
        """Expected survivor sets: order ``i`` enters stage ``t`` with its zero-bonus survival probability."""
        p0 = orders.accept_probs(np.zeros_like(orders.alpha))
        w = survival_before(p0, orders.q)
        stages = []
        for t in range(orders.n_stages):
            keep = w[:, t] > min_weight
            stages.append(StageSet(orders.alpha[keep, t], orders.beta[keep, t], orders.cap[keep],
                                   orders.q[keep, t], w[keep, t]))
        return cls(stages)

    @classmethod
    def thresholded(cls, orders: OrderArrays) -> "StageDataset":
        """Weight-1 survivor sets: stage ``t`` keeps the ``round(expected survivors)`` most likely orders."""
        p0 = orders.accept_probs(np.zeros_like(orders.alpha))
        w = survival_before(p0, orders.q)
        stages = []
        for t in range(orders.n_stages):
            m = int(round(float(w[:, t].sum())))
            keep = np.sort(np.argsort(-w[:, t], kind="stable")[:m])
            stages.append(StageSet(orders.alpha[keep, t], orders.beta[keep, t], orders.cap[keep],
                                   orders.q[keep, t], np.ones(m)))
        return cls(stages)

    @classmethod
    def from_observed(cls, orders: OrderArrays, reached: np.ndarray) -> "StageDataset":
        """Historical survivor sets: ``reached[i, t]`` marks orders seen waiting at stage ``t``."""
        reached = np.asarray(reached, dtype=bool)
        if reached.shape != orders.alpha.shape:
            raise InvalidArgumentError("reached mask must match the order array shape")
        stages = []
        for t in range(orders.n_stages):
            keep = reached[:, t]
            stages.append(StageSet(orders.alpha[keep, t], orders.beta[keep, t], orders.cap[keep],
                                   orders.q[keep, t], np.ones(int(keep.sum()))))
        return cls(stages)


@dataclass
class DpTables:
    g: np.ndarray
    lam: np.ndarray
    G: np.ndarray
    split: np.ndarray
    sizes: np.ndarray
    cancel_mass: np.ndarray
    money_unit: float = DEFAULT_MONEY_UNIT
    future_scale: str = "survivors"

    @property
    def n_stages(self) -> int:
        return self.g.shape[0]

    @property
    def levels(self) -> int:
        return self.g.shape[1] - 1

    @property
    def value(self) -> float:
        return float(self.G[0, -1])


@dataclass(frozen=True)
class MultiplierSchedule:
    lambdas: tuple[float, ...]
    stage_budgets: tuple[int, ...] = ()
    money_unit: float = DEFAULT_MONEY_UNIT

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "stage_budgets", tuple(int(x) for x in self.stage_budgets))
        if any(not math.isfinite(x) or x < 0 for x in self.lambdas):
            raise InvalidArgumentError("multipliers must be finite and >= 0")
        if self.stage_budgets and len(self.stage_budgets) != len(self.lambdas):
            raise InvalidArgumentError("stage budgets and multipliers differ in length")

    @property
    def n_stages(self) -> int:
        return len(self.lambdas)

    def scaled(self, factor: float) -> "MultiplierSchedule":
        return MultiplierSchedule(tuple(x * factor for x in self.lambdas), self.stage_budgets, self.money_unit)


def budget_levels(budget: float, money_unit: float = DEFAULT_MONEY_UNIT) -> int:
    """Whole money levels contained in a currency budget."""
    if budget < 0 or money_unit <= 0:
        raise InvalidArgumentError("budget must be >= 0 and money unit > 0")
    return int(math.floor(budget / money_unit + 1e-9))


def build_stage_tables(data: StageDataset, levels: int, money_unit: float = DEFAULT_MONEY_UNIT,
                       lam_max: float = LAMBDA_MAX) -> tuple[np.ndarray, np.ndarray]:
    if levels < 0:
        raise InvalidArgumentError("number of money levels must be >= 0")
    budgets = np.arange(levels + 1) * money_unit
    g = np.zeros((data.n_stages, levels + 1))
    lam = np.zeros((data.n_stages, levels + 1))
    for t, stage in enumerate(data.stages):
        if stage.weight.size == 0:
            continue
        g[t], lam[t] = solve_budgets(stage.problem(), budgets, lam_max=lam_max)
    return g, lam


@numba.njit(cache=True)
def _recurse_kernel(g, sizes, cancel_mass, literal):
    n_stages, width = g.shape
    levels = width - 1
    G = np.empty_like(g)
    split = np.empty((n_stages, width), dtype=np.int64)
    for b in range(width):
        G[n_stages - 1, b] = g[n_stages - 1, b]
        split[n_stages - 1, b] = b
    for t in range(n_stages - 2, -1, -1):
        n_t = sizes[t]
        denom = n_t if literal else sizes[t + 1]
        for b in range(width):
            best = -np.inf
            k_best = 0
            for k in range(b + 1):
                cand = g[t, k]
                survivors = n_t - g[t, k] - cancel_mass[t]
                if survivors > 0.0 and denom > 0.0:
                    ratio = survivors / denom
                    idx = math.floor((b - k) / ratio + _INDEX_SLACK)
                    if idx > levels:
                        idx = levels
                    cand += ratio * G[t + 1, idx]
                if cand > best:
                    best = cand
                    k_best = k
            G[t, b] = best
            split[t, b] = k_best
    return G, split


def recurse(g: np.ndarray, data: StageDataset, future_scale: str = "survivors") -> tuple[np.ndarray, np.ndarray]:
    """Fill ``G`` and the split table from the last stage backwards.

    ``future_scale="survivors"`` rescales the next-stage table by the ratio of
    survivors after spending ``k`` to the size of the population that table was
    built on; ``"literal"`` divides by the current stage size instead.
    """
    if future_scale not in ("survivors", "literal"):
        raise InvalidArgumentError(f"unknown future scale {future_scale!r}")
    g = np.ascontiguousarray(g, dtype=float)
    if g.shape[0] != data.n_stages:
        raise InvalidArgumentError("stage tables do not match the dataset")
    return _recurse_kernel(g, data.sizes.astype(float), data.cancel_mass.astype(float),
                           future_scale == "literal")


def survivor_ratio(tables: DpTables, t: int, k: int) -> float:
    """Rescaling factor the recursion applied after spending ``k`` levels at 0-based stage ``t``."""
    survivors = tables.sizes[t] - tables.g[t, k] - tables.cancel_mass[t]
    denom = tables.sizes[t] if tables.future_scale == "literal" else tables.sizes[t + 1]
    if survivors <= 0 or denom <= 0:
        return 0.0
    return survivors / denom


def backtrack(tables: DpTables, levels: int | None = None, rescale: bool = True) -> MultiplierSchedule:
    """Walk the split table forward from the full budget.

    By default the remainder after stage ``t`` is mapped onto the next table
    the same way the recursion indexed it, ``floor((b - k) / ratio)``.  With
    ``rescale=False`` it is reduced by direct subtraction instead.
    """
    B = tables.levels if levels is None else levels
    if not 0 <= B <= tables.levels:
        raise InvalidArgumentError("budget level outside the tables")
    remaining = B
    lambdas, budgets = [], []
    for t in range(tables.n_stages):
        k = int(tables.split[t, remaining])
        lambdas.append(float(tables.lam[t, k]))
        budgets.append(k)
        if t == tables.n_stages - 1:
            break
        if rescale:
            ratio = survivor_ratio(tables, t, k)
            if ratio > 0:
                remaining = min(tables.levels, int(math.floor((remaining - k) / ratio + _INDEX_SLACK)))
            else:
                remaining = 0
        else:
            remaining -= k
    return MultiplierSchedule(tuple(lambdas), tuple(budgets), tables.money_unit)


@dataclass
class LddpSolver:
    """Stage tables built once up to ``max_levels`` and reused for any smaller budget."""

    data: StageDataset
    max_levels: int
    money_unit: float = DEFAULT_MONEY_UNIT
    future_scale: str = "survivors"
    lam_max: float = LAMBDA_MAX
    g: np.ndarray = field(init=False, repr=False)
    lam: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.g, self.lam = build_stage_tables(self.data, self.max_levels, self.money_unit, self.lam_max)

    def tables(self, levels: int | None = None) -> DpTables:
        B = self.max_levels if levels is None else levels
        if not 0 <= B <= self.max_levels:
            raise InvalidArgumentError(f"budget of {B} levels exceeds the prepared {self.max_levels}")
        g = self.g[:, :B + 1]
        G, split = recurse(g, self.data, self.future_scale)
        return DpTables(g.copy(), self.lam[:, :B + 1].copy(), G, split, self.data.sizes,
                        self.data.cancel_mass, self.money_unit, self.future_scale)

    def schedule(self, budget: float, rescale: bool = True) -> tuple[DpTables, MultiplierSchedule]:
        tables = self.tables(budget_levels(budget, self.money_unit))
        return tables, backtrack(tables, rescale=rescale)


def run_lddp(data: StageDataset, budget: float, money_unit: float = DEFAULT_MONEY_UNIT,
             future_scale: str = "survivors", rescale: bool = True) -> tuple[DpTables, MultiplierSchedule]:
    """Full offline pass: stage tables, recursion, backtrack."""
    solver = LddpSolver(data, budget_levels(budget, money_unit), money_unit, future_scale)
    return solver.schedule(budget, rescale=rescale)


# -- JSON-lines artifact ------------------------------------------------------------

def write_artifact(path, tables: DpTables, schedule: MultiplierSchedule, include_tables: bool = True) -> None:
    """One JSON object per line: a meta record, optional table cells, then the schedule."""
    path = Path(path)
    with path.open("w") as fh:
        meta = {
            "kind": "meta",
            "stages": tables.n_stages,
            "levels": tables.levels,
            "money_unit": tables.money_unit,
            "future_scale": tables.future_scale,
            "value": tables.value,
            "sizes": [float(x) for x in tables.sizes],
            "cancel_mass": [float(x) for x in tables.cancel_mass],
        }
        fh.write(json.dumps(meta) + "\n")
        if include_tables:
            for t in range(tables.n_stages):
                for b in range(tables.levels + 1):
                    fh.write(json.dumps({
                        "kind": "table", "stage": t + 1, "level": b,
                        "g": float(tables.g[t, b]), "lambda": float(tables.lam[t, b]),
                        "G": float(tables.G[t, b]), "split": int(tables.split[t, b]),
                    }) + "\n")
        write_schedule_lines(fh, schedule)


def write_schedule_lines(fh, schedule: MultiplierSchedule) -> None:
    budgets = schedule.stage_budgets or (0,) * schedule.n_stages
    for t, (lam, b) in enumerate(zip(schedule.lambdas, budgets), start=1):
        fh.write(json.dumps({"kind": "schedule", "stage": t, "lambda": lam, "stage_budget": b}) + "\n")


def read_artifact(path) -> tuple[dict, DpTables | None, MultiplierSchedule]:
    meta: dict = {}
    cells: list[dict] = []
    sched: list[dict] = []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "meta":
                meta = rec
            elif kind == "table":
                cells.append(rec)
            elif kind == "schedule":
                sched.append(rec)
            else:
                raise InvalidArgumentError(f"unknown artifact record kind {kind!r}")
    if not sched:
        raise InvalidArgumentError(f"{path}: no schedule records")
    sched.sort(key=lambda r: r["stage"])
    money_unit = float(meta.get("money_unit", DEFAULT_MONEY_UNIT))
    schedule = MultiplierSchedule(tuple(r["lambda"] for r in sched), tuple(r["stage_budget"] for r in sched),
                                  money_unit)
    tables = None
    if cells:
        T, B = int(meta["stages"]), int(meta["levels"])
        arrs = {k: np.zeros((T, B + 1)) for k in ("g", "lambda", "G")}
        split = np.zeros((T, B + 1), dtype=np.int64)
        for rec in cells:
            t, b = rec["stage"] - 1, rec["level"]
            for k in arrs:
                arrs[k][t, b] = rec[k]
            split[t, b] = rec["split"]
        tables = DpTables(arrs["g"], arrs["lambda"], arrs["G"], split, np.asarray(meta["sizes"]),
                          np.asarray(meta["cancel_mass"]), money_unit, meta.get("future_scale", "survivors"))
    return meta, tables, schedule
