"""Estimating acceptance curves from bonus/outcome observations and calibrating scores by binning."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .core import ALPHA_EPS, AcceptanceCurve, InvalidArgumentError, MsbaError, from_minor, to_minor

GRAD_TOL = 1e-8
MAX_ITER = 200
DEFAULT_BIN_WIDTH = 0.05
OBSERVATION_HEADER = ["segment", "stage", "bonus", "accepted"]


class DegenerateFitError(MsbaError):
    """Data cannot identify both parameters; ``fallback`` is the clamped best effort."""

    def __init__(self, message: str, fallback: AcceptanceCurve):
        super().__init__(message)
        self.fallback = fallback


@dataclass
class ObservationSet:
    segment: Hashable
    bonus: np.ndarray
    accepted: np.ndarray

    def __post_init__(self):
        self.bonus = np.asarray(self.bonus, dtype=float).reshape(-1)
        self.accepted = np.asarray(self.accepted, dtype=bool).reshape(-1)
        if self.bonus.size == 0:
            raise InvalidArgumentError("observation set is empty")
        if self.bonus.size != self.accepted.size:
            raise InvalidArgumentError("bonus and accepted differ in length")
        if not np.all(np.isfinite(self.bonus)) or np.any(self.bonus < 0):
            raise InvalidArgumentError("bonuses must be finite and >= 0")

    @classmethod
    def from_samples(cls, segment, samples: Iterable[tuple[float, bool]]):
        rows = list(samples)
        return cls(segment, [r[0] for r in rows], [r[1] for r in rows])

    @property
    def n(self) -> int:
        return self.bonus.size


@dataclass
class FitTrace:
    log_likelihood: list[float] = field(default_factory=list)
    grad_norm: float = math.inf
    iterations: int = 0
    projected_at: int | None = None  # index where the fixed-slope refit starts


def log_likelihood(alpha: float, beta: float, bonus: np.ndarray, accepted: np.ndarray) -> float:
    z = -(alpha * bonus + beta)
    return float(np.sum(np.where(accepted, log_expit(z), log_expit(-z))))


def _grad_hess(alpha, beta, bonus, y):
    # p = expit(z), z = -(alpha c + beta); dLL/dz = y - p
    p = expit(-(alpha * bonus + beta))
    r = y - p
    g = -np.array([np.dot(r, bonus), r.sum()])
    w = p * (1.0 - p)
    h = -np.array([[np.dot(w, bonus * bonus), np.dot(w, bonus)], [np.dot(w, bonus), w.sum()]])
    return g, h


def _newton(bonus, y, alpha, beta, fix_alpha: bool, trace: FitTrace):
    ll = log_likelihood(alpha, beta, bonus, y)
    trace.log_likelihood.append(ll)
    for _ in range(MAX_ITER):
        g, h = _grad_hess(alpha, beta, bonus, y)
        if fix_alpha:
            g, h = np.array([0.0, g[1]]), np.array([[1.0, 0.0], [0.0, h[1, 1]]])
        gn = float(np.linalg.norm(g))
        trace.grad_norm = gn
        if gn <= GRAD_TOL:
            break
        try:
            step = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            step = g / max(abs(h[1, 1]), 1.0)
        if not np.dot(step, g) > 0:  # not an ascent direction: fall back to the gradient
            step = g / max(np.abs(np.diag(h)).max(), 1.0)
        # halve until the likelihood does not drop
        t = 1.0
        while t > 1e-12:
            a_new, b_new = alpha + t * step[0], beta + t * step[1]
            ll_new = log_likelihood(a_new, b_new, bonus, y)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            break
        alpha, beta, ll = a_new, b_new, ll_new
        trace.log_likelihood.append(ll)
        trace.iterations += 1
    return alpha, beta


def fit_logistic(obs: ObservationSet, trace: FitTrace | None = None) -> AcceptanceCurve:
    """Maximum-likelihood ``(alpha, beta)`` by damped Newton steps from ``(-0.5, 0)``.

    An unconstrained optimum with ``alpha > -eps`` is projected to
    ``alpha = -eps`` and ``beta`` is refit with the slope held there,
    starting from the pooled log-odds.
    """
    trace = trace if trace is not None else FitTrace()
    bonus, y = obs.bonus, obs.accepted.astype(float)
    rate = float(y.mean())
    levels = np.unique(bonus)

    def fallback(beta: float) -> AcceptanceCurve:
        return AcceptanceCurve(-ALPHA_EPS, float(np.clip(beta, -700.0, 700.0)))

    if rate in (0.0, 1.0):
        beta = 36.0 if rate == 0.0 else -36.0
        raise DegenerateFitError(f"segment {obs.segment}: every outcome is {bool(rate)}", fallback(beta))
    logit_rate = math.log1p(-rate) - math.log(rate)
    if levels.size < 2:
        raise DegenerateFitError(f"segment {obs.segment}: a single bonus level cannot identify the slope",
                                 fallback(logit_rate))
    # separation: every acceptance sits at or above every rejection (or the reverse)
    acc_b, rej_b = bonus[y == 1], bonus[y == 0]
    if acc_b.min() > rej_b.max() or rej_b.min() > acc_b.max():
        raise DegenerateFitError(f"segment {obs.segment}: outcomes are perfectly separated by bonus",
                                 fallback(logit_rate))

    alpha, beta = _newton(bonus, y, -0.5, 0.0, False, trace)
    if alpha > -ALPHA_EPS:
        trace.projected_at = len(trace.log_likelihood)
        # the free ascent may have drifted far out; the pooled logit is near optimal at this slope
        alpha, beta = _newton(bonus, y, -ALPHA_EPS, logit_rate, True, trace)
    return AcceptanceCurve(float(alpha), float(beta))


def fit_segments(rows: Iterable[tuple[Hashable, int, float, bool]]) -> dict[tuple[Hashable, int], AcceptanceCurve]:
    """One curve per ``(segment, stage)``; degenerate groups take their fallback curve."""
    groups: dict[tuple, list] = defaultdict(list)
    for seg, stage, bonus, acc in rows:
        groups[(seg, stage)].append((bonus, acc))
    out = {}
    for key in sorted(groups, key=lambda k: (str(k[0]), k[1])):
        try:
            out[key] = fit_logistic(ObservationSet.from_samples(key, groups[key]))
        except DegenerateFitError as err:
            out[key] = err.fallback
    return out


# -- score calibration ----------------------------------------------------------

@dataclass
class CalibrationTable:
    width: float
    rates: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.counts = np.asarray(self.counts, dtype=int)
        if self.rates.shape != self.counts.shape or self.rates.size != n_bins(self.width):
            raise InvalidArgumentError("rates and counts must cover every bin")

    def bin_of(self, score) -> np.ndarray:
        return bin_index(score, self.width)


def n_bins(width: float) -> int:
    if not 0 < width <= 1:
        raise InvalidArgumentError(f"bin width must lie in (0, 1], got {width}")
    return int(math.ceil(1.0 / width - 1e-9))


def bin_index(score, width: float) -> np.ndarray:
    s = np.asarray(score, dtype=float)
    if np.any(~np.isfinite(s)) or np.any((s < 0) | (s > 1)):
        raise InvalidArgumentError("scores must lie in [0, 1]")
    k = n_bins(width)
    # round-off guard so that e.g. 0.15 / 0.05 lands in bin 3, not 2
    return np.minimum(np.floor(s / width + 1e-9).astype(int), k - 1)


def calibrate_bins(scores: Sequence[float], labels: Sequence[bool], width: float = DEFAULT_BIN_WIDTH) -> CalibrationTable:
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if scores.size != labels.size:
        raise InvalidArgumentError("scores and labels differ in length")
    k = n_bins(width)
    idx = bin_index(scores, width)
    counts = np.bincount(idx, minlength=k)
    pos = np.bincount(idx, weights=labels.astype(float), minlength=k)
    rates = np.zeros(k)
    filled = np.flatnonzero(counts)
    if filled.size == 0:
        return CalibrationTable(width, rates, counts)
    rates[filled] = pos[filled] / counts[filled]
    # empty bins copy the nearest filled bin (the lower one on ties)
    for j in np.flatnonzero(counts == 0):
        dist = np.abs(filled - j)
        rates[j] = rates[filled[np.argmin(dist)]]
    return CalibrationTable(width, rates, counts)


def apply_calibration(table: CalibrationTable, score):
    out = table.rates[table.bin_of(score)]
    return float(out) if np.ndim(out) == 0 else out


# -- file formats ----------------------------------------------------------------

def read_observations(path) -> list[tuple[str, int, float, bool]]:
    """Observation CSV: segment, stage (1-based), bonus in minor units, accepted (0/1)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(OBSERVATION_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise InvalidArgumentError(f"observation file lacks columns {sorted(missing)}")
        for line, rec in enumerate(reader, start=2):
            try:
                stage = int(rec["stage"])
                bonus = from_minor(int(rec["bonus"]))
                acc = rec["accepted"].strip().lower() in ("1", "true")
            except ValueError as err:
                raise InvalidArgumentError(f"line {line}: {err}") from None
            if stage < 1 or bonus < 0:
                raise InvalidArgumentError(f"line {line}: stage must be >= 1 and bonus >= 0")
            rows.append((rec["segment"], stage, bonus, acc))
    return rows


def write_observations(path, rows: Iterable[tuple[str, int, float, bool]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATION_HEADER)
        for seg, stage, bonus, acc in rows:
            writer.writerow([seg, stage, to_minor(bonus), int(bool(acc))])


def write_curves(path, curves: dict[tuple[Hashable, int], AcceptanceCurve]) -> None:
    with open(path, "w") as fh:
        for (seg, stage), c in curves.items():
            fh.write(json.dumps({"segment": seg, "stage": stage, "alpha": c.alpha, "beta": c.beta}) + "\n")


def read_curves(path) -> dict[tuple[str, int], AcceptanceCurve]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[(rec["segment"], int(rec["stage"]))] = AcceptanceCurve(float(rec["alpha"]), float(rec["beta"]))
    return out
