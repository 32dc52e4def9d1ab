import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

import oracles
from msba.core import (ALPHA_EPS, AcceptanceCurve, DomainError, InvalidArgumentError, OrderArrays, OrderProfile,
                       StagePlan, acceptance_prob, inverse_bonus, lifecycle_accept_prob, lifecycle_expected_spend,
                       prob_bounds, read_orders_jsonl, write_orders_jsonl)
from strategies import alphas, betas, caps, order_arrays, plans


def profile(a, b, q, cap, i=0):
    return OrderProfile(i, tuple(AcceptanceCurve(float(x), float(y)) for x, y in zip(a[i], b[i])),
                        tuple(float(x) for x in q[i]), float(cap[i]))


# -- examples -------------------------------------------------------------------------

def test_acceptance_prob_examples():
    assert acceptance_prob(AcceptanceCurve(-1.0, 0.0), 0.0) == 0.5
    assert acceptance_prob(AcceptanceCurve(-0.5, 1.0), 2.0) == 0.5
    assert acceptance_prob(AcceptanceCurve(-1.0, 2.0), 0.0) == pytest.approx(0.11920292202211755, rel=1e-15)


def test_inverse_bonus_examples():
    assert inverse_bonus(AcceptanceCurve(-1.0, 0.0), 0.5) == 0.0
    assert inverse_bonus(AcceptanceCurve(-1.0, 2.0), 0.5) == 2.0
    c = inverse_bonus(AcceptanceCurve(-2.0, 1.0), 0.8)
    assert c == pytest.approx(1.1931471805599454, rel=1e-14)
    assert acceptance_prob(AcceptanceCurve(-2.0, 1.0), c) == pytest.approx(0.8, rel=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_inverse_bonus_domain(p):
    with pytest.raises(DomainError):
        inverse_bonus(AcceptanceCurve(-1.0, 0.0), p)


@pytest.mark.parametrize("alpha,beta", [(0.0, 0.0), (0.5, 0.0), (-ALPHA_EPS / 2, 0.0), (math.nan, 0.0),
                                        (-1.0, math.inf)])
def test_curve_validation(alpha, beta):
    with pytest.raises(InvalidArgumentError):
        AcceptanceCurve(alpha, beta)


@pytest.mark.parametrize("bonus", [-0.1, math.inf, math.nan])
def test_acceptance_prob_rejects_bad_bonus(bonus):
    with pytest.raises(InvalidArgumentError):
        acceptance_prob(AcceptanceCurve(-1.0, 0.0), bonus)


def two_stage_example():
    # p1(1) = 0.5, q1 = 0.1, p2(2) = 0.5
    return OrderProfile("x", (AcceptanceCurve(-1.0, 1.0), AcceptanceCurve(-1.0, 2.0)), (0.1, 0.0), 2.0)


def test_lifecycle_examples():
    single = OrderProfile("s", (AcceptanceCurve(-1.0, 0.0),), (0.0,), 3.0)
    assert lifecycle_accept_prob(single, StagePlan((0.0,))) == 0.5
    assert lifecycle_expected_spend(single, StagePlan((0.0,))) == 0.0
    half_at_two = OrderProfile("s", (AcceptanceCurve(-1.0, 2.0),), (0.0,), 3.0)
    assert lifecycle_expected_spend(half_at_two, StagePlan((2.0,))) == pytest.approx(1.0, rel=1e-15)

    order = two_stage_example()
    plan = StagePlan((1.0, 2.0))
    assert lifecycle_accept_prob(order, plan) == pytest.approx(0.70, abs=1e-15)
    assert lifecycle_expected_spend(order, plan) == pytest.approx(0.9, abs=1e-15)
    assert oracles.path_enumeration([0.5, 0.5], [0.1, 0.0], [1.0, 2.0]) == pytest.approx((0.70, 0.9), abs=1e-15)


def test_no_survivors_after_first_stage():
    c1 = AcceptanceCurve(-1.0, 0.5)
    p1 = acceptance_prob(c1, 1.0)
    order = OrderProfile("z", (c1, AcceptanceCurve(-1.0, -2.0)), (1.0 - p1, 0.0), 1.0)
    assert lifecycle_accept_prob(order, StagePlan((1.0, 1.0))) == pytest.approx(p1, abs=1e-15)


def test_profile_validation():
    curve = AcceptanceCurve(-1.0, -3.0)  # p(cap) close to 1
    with pytest.raises(InvalidArgumentError, match="exceeds 1"):
        OrderProfile("bad", (curve,), (0.2,), 3.0)
    with pytest.raises(InvalidArgumentError):
        OrderProfile("bad", (curve,), (0.0, 0.0), 3.0)
    with pytest.raises(InvalidArgumentError):
        OrderProfile("bad", (), (), 3.0)
    with pytest.raises(InvalidArgumentError):
        OrderProfile("bad", (curve,), (1.0,), 0.0)
    with pytest.raises(InvalidArgumentError):
        OrderProfile("bad", (curve,), (0.0,), -1.0)
    order = OrderProfile("ok", (curve,), (0.0,), 3.0)
    with pytest.raises(InvalidArgumentError):
        lifecycle_accept_prob(order, StagePlan((0.0, 0.0)))
    with pytest.raises(InvalidArgumentError):
        lifecycle_accept_prob(order, StagePlan((3.5,)))


def test_prob_bounds():
    b = prob_bounds(AcceptanceCurve(-1.0, 0.0), 2.0)
    assert b.p_low == 0.5 and b.p_high == pytest.approx(float(expit(2.0)))


def test_orders_jsonl_round_trip(tmp_path):
    a = np.array([[-1.0, -0.5], [-2.0, -1.5]])
    b = np.array([[3.5, 4.0], [8.0, 7.0]])
    q = np.array([[0.01, 0.02], [0.0, 0.03]])
    orders = OrderArrays(a, b, q, [3.0, 4.5], ids=["a", "b"], segments=["s1", "s2"])
    path = tmp_path / "orders.jsonl"
    write_orders_jsonl(path, orders)
    back = read_orders_jsonl(path)
    np.testing.assert_array_equal(back.alpha, a)
    np.testing.assert_array_equal(back.q, q)
    np.testing.assert_array_equal(back.cap, [3.0, 4.5])
    assert back.ids == ["a", "b"] and back.segments == ["s1", "s2"]
    (tmp_path / "empty.jsonl").write_text("")
    assert read_orders_jsonl(tmp_path / "empty.jsonl") is None
    (tmp_path / "bad.jsonl").write_text('{"id": 1, "segment": "", "cap": 300, "stages": [[-1.0, -3.0, 0.5]]}\n')
    with pytest.raises(InvalidArgumentError):
        read_orders_jsonl(tmp_path / "bad.jsonl")


# -- properties -------------------------------------------------------------------------

@given(alphas, betas, st.floats(0.0, 20.0), st.floats(0.0, 20.0))
def test_acceptance_strictly_increasing(alpha, beta, c1, c2):
    curve = AcceptanceCurve(alpha, beta)
    lo, hi = sorted((c1, c2))
    p_lo, p_hi = acceptance_prob(curve, lo), acceptance_prob(curve, hi)
    assert 0.0 <= p_lo <= p_hi <= 1.0
    # strictness is only observable where the float gap is resolvable
    if hi - lo > 1e-6 and p_hi < 1.0 - 1e-9 and p_lo > 1e-300:
        assert p_lo < p_hi


@given(st.floats(-10.0, -ALPHA_EPS), betas, st.floats(0.0, 1.0))
def test_round_trip_probability(alpha, beta, u):
    curve = AcceptanceCurve(alpha, beta)
    p_min = max(1e-6, acceptance_prob(curve, 0.0))
    p = p_min + u * (1.0 - 1e-6 - p_min)
    c = inverse_bonus(curve, p)
    assert c >= -1e-9 * (1 + abs(beta / alpha))
    assert acceptance_prob(curve, max(c, 0.0)) == pytest.approx(p, rel=1e-9)


@given(st.floats(-10.0, -ALPHA_EPS), betas, st.floats(0.0, 50.0))
def test_round_trip_bonus(alpha, beta, c):
    curve = AcceptanceCurve(alpha, beta)
    p = acceptance_prob(curve, c)
    if not 1e-6 <= p <= 1.0 - 1e-6:
        return
    logit = abs(math.log1p(-p) - math.log(p))
    scale = (abs(beta) + logit) / abs(alpha)
    assert inverse_bonus(curve, p) == pytest.approx(c, rel=1e-9, abs=1e-9 * (1.0 + scale))


@given(order_arrays(max_orders=1, max_stages=4, q_max=1.0), st.data())
def test_lifecycle_matches_path_enumeration(inst, data):
    a, b, q, cap = inst
    c = data.draw(plans(cap, a.shape[1]))
    order = profile(a, b, q, cap)
    plan = StagePlan(tuple(c[0]))
    p = expit(-(a[0] * c[0] + b[0]))
    acc, spend = oracles.path_enumeration(p, q[0], c[0])
    assert lifecycle_accept_prob(order, plan) == pytest.approx(acc, abs=1e-12)
    assert lifecycle_expected_spend(order, plan) == pytest.approx(spend, abs=1e-12)
    total = sum(x[2] for x in oracles.path_probabilities(p, q[0]))
    assert total == pytest.approx(1.0, abs=1e-12)


@given(order_arrays(max_orders=1, max_stages=6, q_max=1.0), st.data())
def test_spend_bounded(inst, data):
    a, b, q, cap = inst
    c = data.draw(plans(cap, a.shape[1]))
    spend = lifecycle_expected_spend(profile(a, b, q, cap), StagePlan(tuple(c[0])))
    assert 0.0 <= spend <= c.max() + 1e-12
    assert lifecycle_expected_spend(profile(a, b, q, cap), StagePlan((0.0,) * a.shape[1])) == 0.0


@given(alphas, betas, caps)
def test_spend_convex_in_probability(alpha, beta, cap):
    curve = AcceptanceCurve(alpha, beta)
    lo, hi = acceptance_prob(curve, 0.0), acceptance_prob(curve, cap)
    if hi - lo < 1e-6:
        return
    p = np.linspace(lo, hi, 201)[1:-1]
    g = np.array([x * inverse_bonus(curve, x) for x in p])
    d2 = g[2:] - 2 * g[1:-1] + g[:-2]
    assert np.all(d2 >= -1e-12 * max(1.0, np.abs(g).max()))


@given(alphas, betas, caps, st.floats(1e-6, 1.0))
def test_infeasible_cancel_rejected(alpha, beta, cap, excess):
    curve = AcceptanceCurve(alpha, beta)
    q = 1.0 - acceptance_prob(curve, cap) + excess  # at or above 1 is rejected too
    with pytest.raises(InvalidArgumentError):
        OrderProfile("x", (curve,), (q,), cap)


@given(order_arrays(max_orders=5, max_stages=4))
def test_order_arrays_round_trip_profiles(inst):
    a, b, q, cap = inst
    arr = OrderArrays(a, b, q, cap)
    arr.validate()
    back = OrderArrays.from_profiles(arr.to_profiles())
    np.testing.assert_array_equal(back.alpha, a)
    np.testing.assert_array_equal(back.beta, b)
    np.testing.assert_array_equal(back.q, q)
