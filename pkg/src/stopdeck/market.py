"""Contract parameters, intrinsic payoffs and discounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

OPTION_KINDS = ("put", "call")


@dataclass(frozen=True)
class MarketParams:
    """Contract and market constants.

    Parameters
    ----------
    s0 : float
        Initial asset price.
    strike : float
        Strike price K.
    maturity : float
        Time to maturity T in years.
    rate : float
        Continuously compounded risk-free rate.
    dividend : float
        Continuous dividend yield.
    sigma : float
        Volatility per square-root year.
    steps : int
        Number of exercise dates N on the grid ``dt, 2 dt, ..., N dt``.
    option_kind : {"put", "call"}
    """

    s0: float
    strike: float
    maturity: float = 3.0
    rate: float = 0.05
    dividend: float = 0.0
    sigma: float = 0.1
    steps: int = 50
    option_kind: str = "put"

    def __post_init__(self):
        for name in ("s0", "strike", "maturity"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("rate", "dividend", "sigma"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be non-negative and finite, got {value!r}")
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        object.__setattr__(self, "steps", int(self.steps))
        if self.option_kind not in OPTION_KINDS:
            raise ValueError(f"option_kind must be one of {OPTION_KINDS}, got {self.option_kind!r}")

    @property
    def dt(self) -> float:
        return self.maturity / self.steps

    def replace(self, **changes) -> "MarketParams":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return MarketParams(**values)

    def intrinsic(self, s):
        """Vectorised intrinsic value of the contract at price(s) ``s``."""
        s = np.asarray(s, dtype=np.float64)
        if self.option_kind == "put":
            return np.maximum(self.strike - s, 0.0)
        return np.maximum(s - self.strike, 0.0)


@dataclass
class PathBatch:
    """A batch of price paths on the exercise grid.

    ``prices[:, 0]`` is time 0 and ``prices[:, t]`` is time ``t * dt``.
    ``starts`` holds the sampled window start of every path for bootstrap
    batches and is ``None`` otherwise.
    """

    prices: np.ndarray
    dt: float
    seed_info: tuple = (None, "")
    starts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        if self.prices.ndim != 2 or self.prices.shape[1] < 2:
            raise ValueError(f"prices must be a batch x (N+1) matrix with N >= 1, got shape {self.prices.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")

    @property
    def batch(self) -> int:
        return self.prices.shape[0]

    @property
    def steps(self) -> int:
        return self.prices.shape[1] - 1

    def returns(self) -> np.ndarray:
        """One-step relative returns ``S_t / S_{t-1}``, shape ``batch x N``."""
        return self.prices[:, 1:] / self.prices[:, :-1]


def _check_price(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")


def put_payoff(s: float, k: float) -> float:
    _check_price("s", s)
    _check_price("k", k)
    return max(k - s, 0.0)


def call_payoff(s: float, k: float) -> float:
    _check_price("s", s)
    _check_price("k", k)
    return max(s - k, 0.0)


def discount(x, r: float, t: float):
    """Present value ``x * exp(-r t)`` of an amount paid ``t`` years from now."""
    if t < 0:
        raise ValueError(f"discount horizon must be non-negative, got {t!r}")
    return x * math.exp(-r * t)


def discount_factors(params: MarketParams) -> np.ndarray:
    """Factors ``exp(-r t dt)`` for ``t = 0..N``."""
    return np.exp(-params.rate * params.dt * np.arange(params.steps + 1))


def payoff_matrix(paths: PathBatch, params: MarketParams, discounted: bool = True) -> np.ndarray:
    """Intrinsic payoff of every path at every grid step.

    With ``discounted`` set (the default) column ``t`` is expressed in time-0
    money, so payoffs collected at different stopping times are comparable.
    """
    if paths.steps != params.steps:
        raise ValueError(f"paths have {paths.steps} steps but params.steps = {params.steps}")
    if not math.isclose(paths.dt, params.dt, rel_tol=1e-12):
        raise ValueError(f"paths dt {paths.dt!r} does not match params dt {params.dt!r}")
    p = params.intrinsic(paths.prices)
    if discounted:
        p = p * discount_factors(params)
    return p
