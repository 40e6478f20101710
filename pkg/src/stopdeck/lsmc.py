"""Longstaff-Schwartz least-squares Monte Carlo baseline.

Continuation values are regressed on monomials of the moneyness ``x = S_t / K``
using in-the-money paths only. Cash flows are kept in the units of
:func:`~stopdeck.market.payoff_matrix` (time-0 money when discounted), so no
extra one-period discounting is needed between dates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._stats import EvalStats
from .market import MarketParams, PathBatch, payoff_matrix

MODEL_FORMAT = "stopdeck-lsmc"
MODEL_VERSION = 1
_RCOND = 1e-10


@dataclass
class LsmcModel:
    """Per-date regression coefficients.

    ``coeffs[t - 1]`` holds the coefficients for date ``t`` (``t = 1..N-1``)
    in increasing powers of ``S_t / K``, or ``None`` for "always continue"
    (no in-the-money paths at fit time).
    """

    degree: int
    steps: int
    coeffs: list
    discounted: bool = True
    rank_deficient: list = field(default_factory=list)
    fitted_on: dict = field(default_factory=dict)
    in_sample: EvalStats | None = None
    in_sample_stops: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.coeffs) != max(self.steps - 1, 0):
            raise ValueError(f"expected {max(self.steps - 1, 0)} coefficient slots, got {len(self.coeffs)}")

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "degree": self.degree,
            "steps": self.steps,
            "discounted": self.discounted,
            "coeffs": [None if c is None else [float(v) for v in c] for c in self.coeffs],
            "rank_deficient": list(self.rank_deficient),
            "fitted_on": self.fitted_on,
            "in_sample": self.in_sample.to_dict() if self.in_sample else None,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ValueError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} model")
        coeffs = [None if c is None else np.asarray(c, dtype=np.float64) for c in doc["coeffs"]]
        ins = EvalStats.from_dict(doc["in_sample"]) if doc.get("in_sample") else None
        return cls(int(doc["degree"]), int(doc["steps"]), coeffs, bool(doc["discounted"]),
                   list(doc.get("rank_deficient", [])), dict(doc.get("fitted_on", {})), ins)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def basis(x, degree):
    """Vandermonde matrix ``[1, x, ..., x^degree]``."""
    return np.vander(np.asarray(x, dtype=np.float64), degree + 1, increasing=True)


def continuation(beta, x):
    """Fitted continuation value by Horner's rule, elementwise in ``x``."""
    out = np.full_like(x, beta[-1], dtype=np.float64)
    for c in beta[-2::-1]:
        out = out * x + c
    return out


def _least_squares(a, y):
    """QR solve; returns (beta, rank_deficient). Falls back to the pseudo-inverse."""
    if a.shape[0] >= a.shape[1]:
        q, r = np.linalg.qr(a)
        diag = np.abs(np.diag(r))
        if diag.min() > _RCOND * diag.max():
            return np.linalg.solve(r, q.T @ y), False
    return np.linalg.pinv(a) @ y, True


def lsmc_fit(paths: PathBatch, params: MarketParams, degree: int = 3, discounted: bool = True) -> LsmcModel:
    """Backward-induction fit of exercise rules on ``paths``.

    At each date ``t = N-1 .. 1`` the realized continuation cash flow of the
    in-the-money paths is regressed on the basis; a path exercises where its
    intrinsic value is at least the fitted continuation value.
    """
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if paths.batch < 10 * (degree + 1):
        raise ValueError(f"need at least {10 * (degree + 1)} paths for degree {degree}, got {paths.batch}")
    p = payoff_matrix(paths, params, discounted)
    n = paths.steps
    cash = p[:, n].copy()
    stops = np.full(paths.batch, n, dtype=np.int64)
    coeffs = [None] * max(n - 1, 0)
    flagged = []
    for t in range(n - 1, 0, -1):
        itm = np.flatnonzero(p[:, t] > 0)
        if itm.size == 0:
            continue
        x = paths.prices[itm, t] / params.strike
        beta, deficient = _least_squares(basis(x, degree), cash[itm])
        if deficient:
            flagged.append(t)
        coeffs[t - 1] = beta
        ex = itm[p[itm, t] >= continuation(beta, x)]
        cash[ex] = p[ex, t]
        stops[ex] = t
    model = LsmcModel(degree, n, coeffs, discounted, sorted(flagged),
                      {"paths": paths.batch, "seed": paths.seed_info[0], "generator": paths.seed_info[1]})
    model.in_sample = EvalStats.from_values(cash)
    model.in_sample_stops = stops
    return model


def exercise_steps(model: LsmcModel, paths: PathBatch, params: MarketParams) -> np.ndarray:
    """First date at which the fitted rule exercises, ``N`` if it never does."""
    if paths.steps != model.steps:
        raise ValueError(f"model fitted for N={model.steps} but paths have N={paths.steps}")
    p = payoff_matrix(paths, params, model.discounted)
    n = paths.steps
    stops = np.full(paths.batch, n, dtype=np.int64)
    alive = np.ones(paths.batch, dtype=bool)
    for t in range(1, n):
        beta = model.coeffs[t - 1]
        if beta is None:
            continue
        cand = np.flatnonzero(alive & (p[:, t] > 0))
        x = paths.prices[cand, t] / params.strike
        ex = cand[p[cand, t] >= continuation(beta, x)]
        stops[ex] = t
        alive[ex] = False
    return stops


def lsmc_apply(model: LsmcModel, paths: PathBatch, params: MarketParams) -> EvalStats:
    """Out-of-sample payoff of the fitted exercise rule on ``paths``."""
    stops = exercise_steps(model, paths, params)
    p = payoff_matrix(paths, params, model.discounted)
    return EvalStats.from_values(p[np.arange(paths.batch), stops])
