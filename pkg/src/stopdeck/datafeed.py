"""Historical price ingestion, relative returns and chronological splits.

CSV contract: UTF-8, a header row naming ``date`` (ISO-8601) and ``close``
columns, rows in ascending date order. Lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent price data."""


@dataclass(frozen=True)
class ReturnSeries:
    """Relative returns ``rho_t = S_t / S_{t-1}``."""

    returns: np.ndarray
    label: str = ""
    provenance: str = ""

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=np.float64).reshape(-1)
        if r.size and not (np.all(np.isfinite(r)) and np.all(r > 0)):
            bad = int(np.flatnonzero(~(np.isfinite(r) & (r > 0)))[0])
            raise DataError(f"return at index {bad} is not strictly positive and finite: {r[bad]!r}")
        r.setflags(write=False)
        object.__setattr__(self, "returns", r)

    def __len__(self):
        return self.returns.size

    def slice(self, start: int, stop: int, suffix: str = "") -> "ReturnSeries":
        prov = f"{self.provenance}[{start}:{stop}]" if self.provenance else f"[{start}:{stop}]"
        label = f"{self.label}{suffix}"
        return ReturnSeries(self.returns[start:stop], label=label, provenance=prov)


@dataclass(frozen=True)
class SplitSpec:
    in_sample_frac: float = 0.8
    train_frac: float = 0.7

    def __post_init__(self):
        for name in ("in_sample_frac", "train_frac"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v!r}")


def _parse_date(text: str):
    text = text.strip()
    try:
        return _dt.date.fromisoformat(text)
    except ValueError:
        return _dt.datetime.fromisoformat(text)


def load_prices(path) -> np.ndarray:
    """Read close prices from a ``date,close`` CSV file.

    Returns
    -------
    numpy.ndarray
        Close prices in file (ascending date) order.

    Raises
    ------
    DataError
        On a missing column, an unparseable row, a non-positive close, dates
        out of order, or a file without data rows. Row numbers are 1-based
        physical line numbers.
    """
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        lines = [(i, line) for i, line in enumerate(fh, start=1) if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: no data rows")
    reader = csv.reader([line for _, line in lines])
    header = [h.strip().lower() for h in next(reader)]
    try:
        i_date, i_close = header.index("date"), header.index("close")
    except ValueError:
        raise DataError(f"{path}: header must contain 'date' and 'close' columns, got {header}") from None

    closes = []
    last_date = None
    for (lineno, _), row in zip(lines[1:], reader):
        try:
            date = _parse_date(row[i_date])
            close = float(row[i_close])
        except (IndexError, ValueError) as exc:
            raise DataError(f"{path}: row {lineno}: cannot parse {row!r} ({exc})") from None
        if not (math.isfinite(close) and close > 0):
            raise DataError(f"{path}: row {lineno}: close price must be positive, got {close!r}")
        if last_date is not None and date <= last_date:
            raise DataError(f"{path}: row {lineno}: date {date} is not after {last_date}")
        last_date = date
        closes.append(close)
    if not closes:
        raise DataError(f"{path}: no data rows")
    return np.asarray(closes, dtype=np.float64)


def to_returns(prices, label: str = "", provenance: str = "") -> ReturnSeries:
    prices = np.asarray(prices, dtype=np.float64).reshape(-1)
    if prices.size < 2:
        raise DataError(f"need at least 2 prices to form returns, got {prices.size}")
    return ReturnSeries(prices[1:] / prices[:-1], label=label, provenance=provenance)


def _floor(x: float) -> int:
    # fractions such as 7658/9573 must map back onto their exact counts
    return math.floor(round(x, 9))


def split(series: ReturnSeries, spec: SplitSpec):
    """Cut a series into contiguous (train, validation, test) segments.

    The in-sample block is the first ``floor(in_sample_frac * n)`` returns.
    Training takes the first ``floor(in_sample_frac * train_frac * n)``
    returns and validation the rest of the in-sample block. The test segment
    is whatever remains.
    """
    n = len(series)
    n_in = _floor(spec.in_sample_frac * n)
    n_train = _floor(spec.in_sample_frac * spec.train_frac * n)
    bounds = {"train": (0, n_train), "validation": (n_train, n_in), "test": (n_in, n)}
    for name, (a, b) in bounds.items():
        if b <= a:
            raise DataError(f"split of {n} returns leaves the {name} segment empty "
                            f"(in_sample_frac={spec.in_sample_frac}, train_frac={spec.train_frac})")
    return tuple(series.slice(a, b, f":{name}") for name, (a, b) in bounds.items())


def load_returns(path, label: str | None = None) -> ReturnSeries:
    """Convenience wrapper: :func:`load_prices` followed by :func:`to_returns`."""
    prices = load_prices(path)
    return to_returns(prices, label=label if label is not None else Path(path).stem, provenance=str(path))
