from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Z95 = 1.96


@dataclass(frozen=True)
class EvalStats:
    """Mean payoff with its sample standard deviation, count and normal 95% CI."""

    mean: float
    std: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"EvalStats needs n >= 1, got {self.n}")
        if self.std < 0:
            raise ValueError(f"std must be non-negative, got {self.std}")

    @property
    def se(self) -> float:
        return self.std / math.sqrt(self.n)

    @property
    def ci95(self) -> tuple[float, float]:
        half = Z95 * self.se
        return (self.mean - half, self.mean + half)

    @classmethod
    def from_values(cls, values) -> "EvalStats":
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise ValueError("cannot summarise an empty payoff vector")
        std = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return cls(float(v.mean()), std, int(v.size))

    def to_dict(self) -> dict:
        lo, hi = self.ci95
        return {"mean": self.mean, "std": self.std, "n": self.n, "se": self.se, "ci95": [lo, hi]}

    @classmethod
    def from_dict(cls, d) -> "EvalStats":
        return cls(float(d["mean"]), float(d["std"]), int(d["n"]))
