"""Domain types, the logistic acceptance model, and lifecycle composition.

An order moves through allocation stages ``t = 1..T``.  At each stage it is
accepted with probability ``p_t(c_t)``, canceled with probability ``q_t``, and
otherwise survives into the next stage.  Orders still waiting after the last
stage are force-canceled by the platform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from scipy.special import expit

# Largest admissible slope: alpha must be <= -ALPHA_EPS (per currency unit).
ALPHA_EPS = 1e-6

# Integer minor units per currency unit used at every I/O boundary.
MINOR_PER_UNIT = 100


class MsbaError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(MsbaError, ValueError):
    pass


class DomainError(MsbaError, ValueError):
    pass


class ConfigurationError(MsbaError, ValueError):
    pass


def to_minor(amount: float) -> int:
    return int(round(amount * MINOR_PER_UNIT))


def from_minor(amount: int) -> float:
    return amount / MINOR_PER_UNIT


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise InvalidArgumentError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class AcceptanceCurve:
    """Logistic bonus response ``p(c) = 1 / (1 + exp(alpha*c + beta))``."""

    alpha: float
    beta: float

    def __post_init__(self):
        _check_finite("alpha", self.alpha)
        _check_finite("beta", self.beta)
        if self.alpha > -ALPHA_EPS:
            raise InvalidArgumentError(
                f"alpha must be <= -{ALPHA_EPS:g} so acceptance rises with bonus, got {self.alpha}"
            )


@dataclass(frozen=True)
class ProbBounds:
    p_low: float
    p_high: float

    def __post_init__(self):
        if not (0.0 < self.p_low <= self.p_high < 1.0):
            raise InvalidArgumentError(f"invalid probability bounds {self.p_low}, {self.p_high}")


@dataclass(frozen=True)
class StagePlan:
    bonuses: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "bonuses", tuple(float(b) for b in self.bonuses))


@dataclass(frozen=True)
class OrderProfile:
    """One order: a curve and a cancellation probability per stage, plus its bonus cap."""

    id: Hashable
    curves: tuple[AcceptanceCurve, ...]
    cancel_probs: tuple[float, ...]
    bonus_cap: float
    segment: str = ""

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "cancel_probs", tuple(float(q) for q in self.cancel_probs))
        if len(self.curves) == 0:
            raise InvalidArgumentError("an order needs at least one stage")
        if len(self.curves) != len(self.cancel_probs):
            raise InvalidArgumentError(
                f"order {self.id}: {len(self.curves)} curves but {len(self.cancel_probs)} cancel probabilities"
            )
        _check_finite("bonus_cap", self.bonus_cap)
        if self.bonus_cap < 0:
            raise InvalidArgumentError(f"order {self.id}: negative bonus cap {self.bonus_cap}")
        for t, (curve, q) in enumerate(zip(self.curves, self.cancel_probs), start=1):
            if not (0.0 <= q < 1.0):
                raise InvalidArgumentError(f"order {self.id}, stage {t}: cancel probability {q} outside [0, 1)")
            # p is increasing in c, so the cap is the worst case for survival.
            if acceptance_prob(curve, self.bonus_cap) + q > 1.0 + 1e-12:
                raise InvalidArgumentError(
                    f"order {self.id}, stage {t}: p(cap) + q = "
                    f"{acceptance_prob(curve, self.bonus_cap) + q:.6g} exceeds 1"
                )

    @property
    def n_stages(self) -> int:
        return len(self.curves)

    def bounds(self, stage: int) -> ProbBounds:
        """Probability bounds at a 0-based stage index."""
        return prob_bounds(self.curves[stage], self.bonus_cap)


def acceptance_prob(curve: AcceptanceCurve, bonus: float) -> float:
    _check_finite("bonus", bonus)
    if bonus < 0:
        raise InvalidArgumentError(f"bonus must be non-negative, got {bonus}")
    return float(expit(-(curve.alpha * bonus + curve.beta)))


def inverse_bonus(curve: AcceptanceCurve, p: float) -> float:
    """Bonus at which the curve reaches ``p``; may be negative."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return -curve.beta / curve.alpha + (math.log1p(-p) - math.log(p)) / curve.alpha


def prob_bounds(curve: AcceptanceCurve, cap: float) -> ProbBounds:
    return ProbBounds(acceptance_prob(curve, 0.0), acceptance_prob(curve, cap))


def _stage_probs(order: OrderProfile, plan: StagePlan) -> tuple[np.ndarray, np.ndarray]:
    if len(plan.bonuses) != order.n_stages:
        raise InvalidArgumentError(
            f"plan has {len(plan.bonuses)} stages, order {order.id} has {order.n_stages}"
        )
    for c in plan.bonuses:
        _check_finite("bonus", c)
        if c < 0 or c > order.bonus_cap + 1e-12:
            raise InvalidArgumentError(f"bonus {c} outside [0, {order.bonus_cap}] for order {order.id}")
    p = np.array([acceptance_prob(cv, c) for cv, c in zip(order.curves, plan.bonuses)])
    return p, np.asarray(order.cancel_probs)


def survival_before(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Probability of still waiting at the start of each stage (last axis is stages)."""
    alive = np.clip(1.0 - p - q, 0.0, 1.0)
    head = np.ones(alive.shape[:-1] + (1,))
    return np.concatenate([head, np.cumprod(alive, axis=-1)[..., :-1]], axis=-1)


def lifecycle_accept_prob(order: OrderProfile, plan: StagePlan) -> float:
    p, q = _stage_probs(order, plan)
    return float(np.sum(survival_before(p, q) * p))


def lifecycle_expected_spend(order: OrderProfile, plan: StagePlan) -> float:
    p, q = _stage_probs(order, plan)
    c = np.asarray(plan.bonuses)
    return float(np.sum(survival_before(p, q) * p * c))


@dataclass
class OrderArrays:
    """Column-stacked view of many orders for vectorized evaluation.

    ``alpha``, ``beta`` and ``q`` have shape ``(n_orders, n_stages)``; ``cap``
    has shape ``(n_orders,)``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    q: np.ndarray
    cap: np.ndarray
    ids: list = field(default_factory=list)
    segments: list = field(default_factory=list)

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.cap = np.asarray(self.cap, dtype=float).reshape(-1)
        shape = self.alpha.shape
        if self.beta.shape != shape or self.q.shape != shape or self.cap.shape != (shape[0],):
            raise InvalidArgumentError("inconsistent order array shapes")
        if not self.ids:
            self.ids = list(range(shape[0]))
        if not self.segments:
            self.segments = [""] * shape[0]

    @property
    def n_orders(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_stages(self) -> int:
        return self.alpha.shape[1]

    @classmethod
    def from_profiles(cls, orders: Sequence[OrderProfile]) -> "OrderArrays":
        if not orders:
            raise InvalidArgumentError("empty order list")
        n_stages = orders[0].n_stages
        if any(o.n_stages != n_stages for o in orders):
            raise InvalidArgumentError("all orders must have the same number of stages")
        return cls(
            alpha=[[cv.alpha for cv in o.curves] for o in orders],
            beta=[[cv.beta for cv in o.curves] for o in orders],
            q=[list(o.cancel_probs) for o in orders],
            cap=[o.bonus_cap for o in orders],
            ids=[o.id for o in orders],
            segments=[o.segment for o in orders],
        )

    def to_profiles(self) -> list[OrderProfile]:
        return [
            OrderProfile(
                id=self.ids[i],
                curves=tuple(AcceptanceCurve(float(a), float(b)) for a, b in zip(self.alpha[i], self.beta[i])),
                cancel_probs=tuple(float(x) for x in self.q[i]),
                bonus_cap=float(self.cap[i]),
                segment=self.segments[i],
            )
            for i in range(self.n_orders)
        ]

    def subset(self, index) -> "OrderArrays":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return OrderArrays(
            self.alpha[index],
            self.beta[index],
            self.q[index],
            self.cap[index],
            ids=[self.ids[i] for i in index],
            segments=[self.segments[i] for i in index],
        )

    def accept_probs(self, bonuses: np.ndarray) -> np.ndarray:
        """Per-stage acceptance probabilities for a ``(n_orders, n_stages)`` bonus matrix."""
        return expit(-(self.alpha * bonuses + self.beta))

    def validate(self) -> None:
        """Reject orders whose survival probability could go negative."""
        if np.any(self.alpha > -ALPHA_EPS):
            raise InvalidArgumentError("alpha must be strictly negative")
        if np.any(self.cap < 0) or np.any((self.q < 0) | (self.q >= 1)):
            raise InvalidArgumentError("caps must be >= 0 and cancel probabilities in [0, 1)")
        worst = self.accept_probs(np.broadcast_to(self.cap[:, None], self.alpha.shape)) + self.q
        bad = np.argwhere(worst > 1.0 + 1e-12)
        if len(bad):
            i, t = bad[0]
            raise InvalidArgumentError(
                f"order {self.ids[i]}, stage {t + 1}: p(cap) + q = {worst[i, t]:.6g} exceeds 1"
            )


# -- orders on disk -------------------------------------------------------------

def write_orders_jsonl(path, orders: OrderArrays) -> None:
    """One order per line: id, segment, cap in minor units, per-stage [alpha, beta, q]."""
    with open(path, "w") as fh:
        for i in range(orders.n_orders):
            stages = [[float(a), float(b), float(q)] for a, b, q in zip(orders.alpha[i], orders.beta[i], orders.q[i])]
            rec = {"id": orders.ids[i], "segment": orders.segments[i], "cap": to_minor(float(orders.cap[i])),
                   "stages": stages}
            fh.write(json.dumps(rec) + "\n")


def read_orders_jsonl(path) -> OrderArrays | None:
    """Orders written by ``write_orders_jsonl``; ``None`` for an empty file."""
    ids, segs, caps, rows = [], [], [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                st = np.asarray(rec["stages"], dtype=float)
                cap = from_minor(int(rec["cap"]))
            except (ValueError, KeyError, TypeError) as err:
                raise InvalidArgumentError(f"{path}:{line_no}: malformed order record ({err})") from None
            if st.ndim != 2 or st.shape[1] != 3 or st.shape[0] == 0:
                raise InvalidArgumentError(f"{path}:{line_no}: stages must be a non-empty list of [alpha, beta, q]")
            if rows and st.shape[0] != rows[0].shape[0]:
                raise InvalidArgumentError(f"{path}:{line_no}: stage count differs from earlier orders")
            ids.append(rec.get("id", len(ids)))
            segs.append(str(rec.get("segment", "")))
            caps.append(cap)
            rows.append(st)
    if not rows:
        return None
    st = np.stack(rows)
    if not np.all(np.isfinite(st)):
        raise InvalidArgumentError(f"{path}: non-finite order parameters")
    orders = OrderArrays(st[:, :, 0], st[:, :, 1], st[:, :, 2], caps, ids=ids, segments=segs)
    orders.validate()
    return orders
