"""Optimal-stopping benchmark: a convolutional stopping policy against least-squares Monte Carlo."""

from ._stats import EvalStats
from .market import MarketParams, PathBatch, payoff_matrix

__all__ = ["EvalStats", "MarketParams", "PathBatch", "payoff_matrix"]
__version__ = "0.1.0"
