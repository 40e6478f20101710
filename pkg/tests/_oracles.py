"""Independent reference values used by the tests."""

import math

import numpy as np


def crr_bermudan(s0, strike, maturity, rate, dividend, sigma, dates, tree_steps=2000, kind="put"):
    """Cox-Ross-Rubinstein price with exercise allowed only on ``dates`` equally spaced dates.

    ``tree_steps`` is rounded up to a multiple of ``dates`` so every exercise
    date falls on a tree layer.
    """
    per = -(-tree_steps // dates)
    m = per * dates
    dt = maturity / m
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp((rate - dividend) * dt) - d) / (u - d)
    disc = math.exp(-rate * dt)
    sign = 1.0 if kind == "call" else -1.0

    def intrinsic(layer):
        s = s0 * u ** (layer - 2.0 * np.arange(layer + 1))
        return np.maximum(sign * (s - strike), 0.0)

    v = intrinsic(m)
    for i in range(m - 1, -1, -1):
        v = disc * (q * v[:-1] + (1 - q) * v[1:])
        if i > 0 and i % per == 0:
            v = np.maximum(v, intrinsic(i))
    return float(v[0])


def best_step(prices, strike, rate, dt, kind="put"):
    """Exhaustive search over exercise steps 1..N of one deterministic path.

    Returns ``(step, value)`` for the discounted payoff maximum and raises if
    the maximum is not unique.
    """
    prices = np.asarray(prices, dtype=float)
    values = []
    for t in range(1, prices.size):
        pay = max(strike - prices[t], 0.0) if kind == "put" else max(prices[t] - strike, 0.0)
        values.append(pay * math.exp(-rate * t * dt))
    values = np.array(values)
    top = values.max()
    winners = np.flatnonzero(values == top)
    if winners.size != 1 or np.sort(values)[-2] > top - 1e-9:
        raise ValueError("optimal step is not unique")
    return int(winners[0]) + 1, float(top)
