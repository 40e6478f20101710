import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stopdeck.market import (
    MarketParams, PathBatch, call_payoff, discount, discount_factors, payoff_matrix, put_payoff,
)

prices = st.floats(min_value=1e-3, max_value=1e6, allow_nan=False)


@pytest.mark.parametrize("s,k,expected", [(90, 100, 10), (120, 100, 0), (100, 100, 0)])
def test_put_payoff(s, k, expected):
    assert put_payoff(s, k) == expected


@pytest.mark.parametrize("s,k,expected", [(120, 100, 20), (90, 100, 0), (100, 100, 0)])
def test_call_payoff(s, k, expected):
    assert call_payoff(s, k) == expected


@pytest.mark.parametrize("fn", [put_payoff, call_payoff])
@pytest.mark.parametrize("s,k", [(0, 100), (-1, 100), (100, 0), (100, -5)])
def test_payoffs_reject_non_positive(fn, s, k):
    with pytest.raises(ValueError):
        fn(s, k)


def test_discount_examples():
    assert discount(100, 0, 1) == 100
    assert discount(100, 0.05, 0) == 100
    assert discount(100, 0.05, 1) == pytest.approx(95.1229, abs=5e-5)


def test_discount_rejects_negative_horizon():
    with pytest.raises(ValueError):
        discount(100, 0.05, -0.1)


@given(prices, prices)
def test_put_plus_call_is_distance(s, k):
    assert put_payoff(s, k) + call_payoff(s, k) == pytest.approx(abs(s - k), rel=1e-12, abs=1e-12)


@given(st.floats(0.01, 1e4), st.floats(0, 0.5), st.floats(0, 10), st.floats(0, 10))
def test_discount_multiplicative_and_monotone(x, r, t1, t2):
    both = discount(x, r, t1 + t2)
    assert both == pytest.approx(discount(discount(x, r, t1), r, t2), rel=1e-12)
    assert discount(x, r, max(t1, t2)) <= discount(x, r, min(t1, t2))


def _constant(level, params, batch=3):
    return PathBatch(np.full((batch, params.steps + 1), float(level)), params.dt)


def test_payoff_matrix_constant_put_undiscounted():
    params = MarketParams(90, 100, maturity=1, rate=0.0, steps=4)
    assert np.all(payoff_matrix(_constant(90, params), params) == 10)


def test_payoff_matrix_single_step_discounted():
    params = MarketParams(90, 100, maturity=1, rate=0.05, steps=1)
    p = payoff_matrix(_constant(90, params), params, discounted=True)
    assert p[0, 1] == pytest.approx(10 * math.exp(-0.05), rel=1e-12)
    assert round(p[0, 1], 4) == 9.5123
    assert p[0, 0] == 10


def test_payoff_matrix_call_out_of_the_money():
    params = MarketParams(90, 100, steps=5, option_kind="call")
    assert not payoff_matrix(_constant(90, params), params).any()


def test_payoff_matrix_undiscounted_flag():
    params = MarketParams(90, 100, maturity=1, rate=0.05, steps=2)
    p = payoff_matrix(_constant(90, params), params, discounted=False)
    assert np.all(p == 10)


def test_payoff_matrix_shape_checks():
    params = MarketParams(100, 100, steps=4)
    with pytest.raises(ValueError, match="steps"):
        payoff_matrix(PathBatch(np.full((2, 6), 100.0), params.dt), params)
    with pytest.raises(ValueError, match="dt"):
        payoff_matrix(PathBatch(np.full((2, 5), 100.0), params.dt * 2), params)


@given(st.lists(prices, min_size=4, max_size=4), st.floats(0, 0.3))
def test_put_payoffs_bounded_by_strike(row, r):
    params = MarketParams(row[0], 100, maturity=1, rate=r, steps=3)
    paths = PathBatch(np.array([row]), params.dt)
    for disc in (True, False):
        assert np.all(payoff_matrix(paths, params, disc) <= params.strike)


def test_discount_factors():
    params = MarketParams(100, 100, maturity=2, rate=0.1, steps=4)
    np.testing.assert_allclose(discount_factors(params), np.exp(-0.1 * 0.5 * np.arange(5)), rtol=1e-15)


@pytest.mark.parametrize("field,value", [
    ("s0", 0), ("strike", -1), ("maturity", 0), ("rate", -0.01), ("dividend", -1), ("sigma", -0.1),
    ("steps", 0), ("steps", 2.5), ("option_kind", "straddle"), ("s0", math.inf),
])
def test_market_params_validation(field, value):
    base = dict(s0=100, strike=100)
    base[field] = value
    with pytest.raises(ValueError, match=field):
        MarketParams(**base)


def test_market_params_dt_and_replace():
    p = MarketParams(120, 100, maturity=3, steps=50)
    assert p.dt == pytest.approx(0.06)
    q = p.replace(steps=10)
    assert q.steps == 10 and q.s0 == 120 and p.steps == 50


def test_path_batch_shape_validation():
    with pytest.raises(ValueError):
        PathBatch(np.ones(5), 0.1)
    with pytest.raises(ValueError):
        PathBatch(np.ones((2, 1)), 0.1)
    with pytest.raises(ValueError):
        PathBatch(np.ones((2, 3)), 0.0)
    b = PathBatch(np.array([[1.0, 2.0, 1.0]]), 0.5)
    assert b.batch == 1 and b.steps == 2
    np.testing.assert_array_equal(b.returns(), [[2.0, 0.5]])
