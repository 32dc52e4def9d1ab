"""Single-stage bonus allocation solved through its Lagrangian dual.

Reparametrized by acceptance probability, the single-stage problem is convex,
so for a multiplier ``lam`` each order independently minimizes
``-p + lam * p * c(p)`` over ``[p(0), p(cap)]`` and the multiplier is found by
bisection on the (monotone) total spend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, wrightomega

from .core import AcceptanceCurve, InvalidArgumentError, acceptance_prob, inverse_bonus

LAMBDA_MAX = 1e4
LAMBDA_TOL = 1e-6
GOLDEN_TOL = 1e-7

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class StageProblem:
    """Orders present at one stage (optionally weighted) and the budget for that stage."""

    alpha: np.ndarray
    beta: np.ndarray
    cap: np.ndarray
    budget: float
    weight: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.cap = np.asarray(self.cap, dtype=float).reshape(-1)
        if self.weight is None:
            self.weight = np.ones_like(self.alpha)
        self.weight = np.asarray(self.weight, dtype=float).reshape(-1)
        n = self.alpha.size
        if not (self.beta.size == self.cap.size == self.weight.size == n):
            raise InvalidArgumentError("inconsistent stage problem arrays")
        if not math.isfinite(self.budget) or self.budget < 0:
            raise InvalidArgumentError(f"budget must be finite and >= 0, got {self.budget}")

    @classmethod
    def from_curves(cls, curves: Sequence[AcceptanceCurve], caps: Sequence[float], budget: float, weights=None):
        return cls(
            alpha=[c.alpha for c in curves],
            beta=[c.beta for c in curves],
            cap=caps,
            budget=budget,
            weight=weights,
        )

    @property
    def n_orders(self) -> int:
        return self.alpha.size

    def with_budget(self, budget: float) -> "StageProblem":
        return StageProblem(self.alpha, self.beta, self.cap, budget, self.weight)


@dataclass
class StageSolution:
    lam: float
    objective: float
    spend: float
    p: np.ndarray
    c: np.ndarray
    degenerate: bool = False


def _inner_objective(curve: AcceptanceCurve, lam: float, p: float) -> float:
    return -p + lam * p * inverse_bonus(curve, p)


def inner_min(curve: AcceptanceCurve, cap: float, lam: float, tol: float = GOLDEN_TOL) -> tuple[float, float]:
    """Golden-section minimization of ``-p + lam * p * c(p)`` over the order's probability box.

    Returns ``(p*, c*)`` with ``c*`` clamped to ``[0, cap]``.
    """
    if lam < 0 or not math.isfinite(lam):
        raise InvalidArgumentError(f"multiplier must be finite and >= 0, got {lam}")
    lo = acceptance_prob(curve, 0.0)
    hi = acceptance_prob(curve, cap)
    if lam == 0.0:
        return hi, cap
    if hi - lo <= tol:
        return lo, 0.0

    a, b = lo, hi
    h = b - a
    c = b - _INV_PHI * h
    d = a + _INV_PHI * h
    fc = _inner_objective(curve, lam, c)
    fd = _inner_objective(curve, lam, d)
    while h > tol:
        # <= keeps the left (cheaper) bracket on ties
        if fc <= fd:
            b, d, fd = d, c, fc
            h = b - a
            c = b - _INV_PHI * h
            fc = _inner_objective(curve, lam, c)
        else:
            a, c, fc = c, d, fd
            h = b - a
            d = a + _INV_PHI * h
            fd = _inner_objective(curve, lam, d)
    p_star = 0.5 * (a + b)

    # endpoints are never evaluated by the search itself
    candidates = [(_inner_objective(curve, lam, lo), lo), (_inner_objective(curve, lam, p_star), p_star),
                  (_inner_objective(curve, lam, hi), hi)]
    best = min(candidates, key=lambda fp: fp[0])
    p_star = best[1]
    c_star = min(max(inverse_bonus(curve, p_star), 0.0), cap)
    return p_star, c_star


def best_response(alpha, beta, cap, lam):
    """Vectorized exact minimizer of ``lam * p(c) * c - p(c)`` over ``[0, cap]``.

    Stationarity in ``u = |alpha| * c`` reads ``u + exp(u - beta) = |alpha|/lam - 1``,
    solved by the Wright omega function.  Broadcasts over all arguments and
    returns ``(c*, p*)``.
    """
    alpha, beta, cap, lam = np.broadcast_arrays(
        np.asarray(alpha, float), np.asarray(beta, float), np.asarray(cap, float), np.asarray(lam, float)
    )
    a = -alpha
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rhs = np.where(lam > 0, a / np.where(lam > 0, lam, 1.0) - 1.0, np.inf)
        # omega + log(omega) = rhs - beta gives u = beta + log(omega) without cancellation
        u = beta + np.log(wrightomega(np.where(np.isfinite(rhs), rhs - beta, 0.0)))
        c = np.where(np.isfinite(rhs), u / a, cap)
    c = np.clip(c, 0.0, cap)
    p = expit(-(alpha * c + beta))
    return c, p


def evaluate(problem: StageProblem, lam: float) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Spend, objective and per-order ``(p*, c*)`` at a multiplier."""
    c, p = best_response(problem.alpha, problem.beta, problem.cap, lam)
    w = problem.weight
    return float(np.dot(w, p * c)), float(np.dot(w, p)), p, c


def spend_at(problem: StageProblem, lam: float) -> float:
    if lam < 0:
        raise InvalidArgumentError("multiplier must be >= 0")
    return evaluate(problem, lam)[0]


def _evaluate_golden(problem: StageProblem, lam: float):
    ps, cs = [], []
    for a, b, cap in zip(problem.alpha, problem.beta, problem.cap):
        p, c = inner_min(AcceptanceCurve(float(a), float(b)), float(cap), lam)
        ps.append(p)
        cs.append(c)
    p, c = np.array(ps), np.array(cs)
    # spend uses the clamped bonus so it matches what would actually be paid
    p_paid = expit(-(problem.alpha * c + problem.beta))
    return float(np.dot(problem.weight, p_paid * c)), float(np.dot(problem.weight, p)), p, c


def solve(problem: StageProblem, lam_max: float = LAMBDA_MAX, tol: float = LAMBDA_TOL,
          method: str = "closed_form") -> StageSolution:
    """Bisection on the multiplier until the bracket is narrower than ``tol``.

    The upper (budget-feasible) end of the final bracket is returned together
    with the allocation it induces.
    """
    if method == "closed_form":
        ev = evaluate
    elif method == "golden":
        ev = _evaluate_golden
    else:
        raise InvalidArgumentError(f"unknown inner method {method!r}")

    if problem.n_orders == 0:
        return StageSolution(0.0, 0.0, 0.0, np.zeros(0), np.zeros(0))

    low, high = 0.0, lam_max
    while high - low > tol:
        mid = 0.5 * (high + low)
        s = ev(problem, mid)[0]
        if s - problem.budget >= 0:
            low = mid
        else:
            high = mid
    spend, objective, p, c = ev(problem, high)
    return StageSolution(high, objective, spend, p, c, degenerate=spend > problem.budget + 1e-12)


def dual_frontier(problem: StageProblem, max_spend: float | None = None, rel_lam_tol: float = 1e-3,
                  spend_tol: float | None = None, chunk: int = 2_000_000):
    """Exact ``(lam, spend, objective)`` points along the dual path, lam ascending.

    Points are refined geometrically until neighbouring multipliers differ by
    less than ``rel_lam_tol`` (relative) and neighbouring spends by less than
    ``spend_tol``, in the region where spend does not exceed ``max_spend``.
    The first point is ``lam = 0`` (every order at its cap) and the last has
    zero spend.
    """
    a = -problem.alpha
    live = (problem.cap > 0) & (problem.weight > 0)
    lam0_spend, lam0_obj, _, _ = evaluate(problem, 0.0)
    if not np.any(live):
        return np.array([0.0]), np.array([lam0_spend]), np.array([lam0_obj])

    # above lam_hi every bonus is zero; below lam_lo every bonus is at cap
    lam_hi = float(np.max(a[live] / (1.0 + np.exp(-problem.beta[live]))))
    m_cap = problem.cap[live] + (1.0 + np.exp(np.minimum(a[live] * problem.cap[live] - problem.beta[live], 700))) / a[live]
    lam_lo = float(np.min(1.0 / m_cap))
    lam_lo = min(lam_lo, lam_hi * 0.5)

    def batch(lams: np.ndarray):
        out_s = np.empty(lams.size)
        out_o = np.empty(lams.size)
        step = max(1, chunk // max(problem.n_orders, 1))
        for k in range(0, lams.size, step):
            lk = lams[k:k + step, None]
            c, p = best_response(problem.alpha[None, :], problem.beta[None, :], problem.cap[None, :], lk)
            out_s[k:k + step] = (p * c) @ problem.weight
            out_o[k:k + step] = p @ problem.weight
        return out_s, out_o

    lams = np.geomspace(lam_lo, lam_hi, 129)
    spends, objs = batch(lams)
    for _ in range(60):
        wide = lams[1:] - lams[:-1] > rel_lam_tol * lams[1:]
        if spend_tol is not None:
            wide |= (spends[:-1] - spends[1:]) > spend_tol
        if max_spend is not None:
            wide &= spends[1:] <= max_spend
        idx = np.flatnonzero(wide)
        if idx.size == 0:
            break
        mids = np.sqrt(lams[idx] * lams[idx + 1])
        ms, mo = batch(mids)
        lams = np.insert(lams, idx + 1, mids)
        spends = np.insert(spends, idx + 1, ms)
        objs = np.insert(objs, idx + 1, mo)

    lams = np.concatenate([[0.0], lams])
    spends = np.concatenate([[lam0_spend], spends])
    objs = np.concatenate([[lam0_obj], objs])
    # guard against round-off breaking monotonicity along the path
    spends = np.minimum.accumulate(spends)
    objs = np.minimum.accumulate(objs)
    return lams, spends, objs


def solve_budgets(problem: StageProblem, budgets: np.ndarray, lam_max: float = LAMBDA_MAX,
                  spend_tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Objective and multiplier for many budgets at once.

    Between two exact dual points the objective is interpolated linearly in
    spend.  By convexity in probability space such a mix is itself a feasible
    allocation, so the value is attainable; the multiplier is interpolated the
    same way.  A zero budget yields ``lam_max``, matching bisection.
    """
    budgets = np.asarray(budgets, dtype=float)
    if problem.n_orders == 0:
        return np.zeros_like(budgets), np.zeros_like(budgets)
    lams, spends, objs = dual_frontier(problem, max_spend=float(budgets.max(initial=0.0)), spend_tol=spend_tol)
    # np.interp needs ascending x: reverse the path (spend decreases with lam)
    s_asc, o_asc, l_asc = spends[::-1], objs[::-1], lams[::-1]
    g = np.interp(budgets, s_asc, o_asc)
    lam = np.interp(budgets, s_asc, l_asc)
    lam = np.where(budgets >= spends[0], 0.0, lam)
    lam = np.where(budgets <= 0.0, lam_max, lam)
    return g, lam
