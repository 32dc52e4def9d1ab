"""Per-order bonus decision from a stage multiplier by enumerating a bonus grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import AcceptanceCurve, InvalidArgumentError
from .lddp import MultiplierSchedule

DEFAULT_GRID_STEP = 0.5


@dataclass(frozen=True)
class BonusGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise InvalidArgumentError("bonus grid is empty")
        if vals[0] != 0.0:
            raise InvalidArgumentError("bonus grid must start at 0")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise InvalidArgumentError("bonus grid must be strictly ascending")

    @classmethod
    def regular(cls, cap: float, step: float = DEFAULT_GRID_STEP) -> "BonusGrid":
        if step <= 0 or cap < 0:
            raise InvalidArgumentError("grid step must be > 0 and cap >= 0")
        n = int(math.floor(cap / step + 1e-9))
        return cls(tuple(i * step for i in range(n + 1)))


@dataclass(frozen=True)
class Decision:
    bonus: float
    objective_value: float
    stage: int


def decide(curve: AcceptanceCurve, cap: float, lam: float, grid: BonusGrid, stage: int = 1) -> Decision:
    """Grid point minimizing ``lam * p(c) * c - p(c)``; ties go to the smaller bonus."""
    if lam < 0 or not math.isfinite(lam):
        raise InvalidArgumentError(f"multiplier must be finite and >= 0, got {lam}")
    if grid.values[-1] > cap + 1e-9:
        raise InvalidArgumentError(f"grid exceeds the order cap {cap}")
    best_c, best_v = 0.0, math.inf
    for c in grid.values:
        p = float(expit(-(curve.alpha * c + curve.beta)))
        v = lam * p * c - p
        if v < best_v:
            best_c, best_v = c, v
    return Decision(best_c, best_v, stage)


def decide_arrays(alpha, beta, cap, lam, step: float = DEFAULT_GRID_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``decide`` on the regular grid ``0, step, ...`` truncated at each order's cap.

    ``alpha``, ``beta`` and ``lam`` broadcast against each other; ``cap`` must
    broadcast against them too.  Returns ``(bonus, objective_value)``.
    """
    alpha, beta, cap, lam = np.broadcast_arrays(
        np.asarray(alpha, float), np.asarray(beta, float), np.asarray(cap, float), np.asarray(lam, float)
    )
    if np.any(lam < 0):
        raise InvalidArgumentError("multipliers must be >= 0")
    n_points = int(math.floor(float(cap.max(initial=0.0)) / step + 1e-9)) + 1
    best_c = np.zeros(alpha.shape)
    best_v = np.full(alpha.shape, np.inf)
    for j in range(n_points):
        c = j * step
        p = expit(-(alpha * c + beta))
        v = lam * p * c - p
        better = (v < best_v) & (c <= cap + 1e-9)
        best_c = np.where(better, c, best_c)
        best_v = np.where(better, v, best_v)
    return best_c, best_v


def decide_batch(curves: Sequence[AcceptanceCurve], caps: Sequence[float], stage: int,
                 schedule: MultiplierSchedule, step: float = DEFAULT_GRID_STEP) -> list[Decision]:
    """Decisions for a batch of orders all sitting at ``stage`` (1-based)."""
    if not 1 <= stage <= schedule.n_stages:
        raise IndexError(f"stage {stage} outside the {schedule.n_stages}-stage schedule")
    if len(curves) != len(caps):
        raise InvalidArgumentError("curves and caps differ in length")
    if not curves:
        return []
    lam = schedule.lambdas[stage - 1]
    bonus, value = decide_arrays([c.alpha for c in curves], [c.beta for c in curves], caps, lam, step)
    return [Decision(float(b), float(v), stage) for b, v in zip(bonus, value)]
