"""Benchmark statistics, CNN-vs-LSMC comparison rows and report files.

Report files written by :func:`emit_report`:

``comparison.csv``
    ``sector,asset,mean_return,return_std,cnn_mean,cnn_std,lsmc_mean,lsmc_std,improvement_pct``;
    one line per asset, ``improvement_pct`` rounded to an integer.
``sectors.csv``
    The same numeric columns averaged per sector, plus ``n_assets`` and
    ``improvement_std_across_assets`` (population standard deviation of the
    per-asset improvements).
``summary.json``
    Full-precision rows, sector aggregates and overall totals.
``<name>.dat``
    Whitespace-separated ``x mean lo hi`` plot data with a ``#`` header,
    one file per payoff-versus-steps series.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._stats import EvalStats
from .market import MarketParams, PathBatch, payoff_matrix

__all__ = [
    "EvalStats", "ComparisonRow", "improvement_pct", "display_pct", "aggregate_sector",
    "european_stats", "clairvoyant_stats", "payoff_vs_steps", "emit_report", "read_comparison_csv",
]

COMPARISON_COLUMNS = ["sector", "asset", "mean_return", "return_std", "cnn_mean", "cnn_std",
                      "lsmc_mean", "lsmc_std", "improvement_pct"]
SECTOR_COLUMNS = ["sector", "n_assets", "mean_return", "return_std", "cnn_mean", "cnn_std", "lsmc_mean",
                  "lsmc_std", "improvement_pct", "improvement_std_across_assets"]


def improvement_pct(cnn_mean: float, lsmc_mean: float) -> float:
    """CNN payoff as a percentage of the LSMC payoff, ``100 * cnn / lsmc``.

    Undefined (``ValueError``) when the LSMC payoff is not positive.
    """
    if not lsmc_mean > 0:
        raise ValueError(f"improvement undefined for non-positive LSMC payoff {lsmc_mean!r}")
    return 100.0 * cnn_mean / lsmc_mean


def display_pct(value: float) -> int:
    """Round half up to the integer shown in tables."""
    return int(math.floor(value + 0.5))


@dataclass
class ComparisonRow:
    label: str
    cnn: EvalStats
    lsmc: EvalStats
    mean_return: float = 0.0
    return_std: float = 0.0
    sector: str = ""
    improvement: float | None = None
    improvement_std: float = 0.0
    n_assets: int = 1

    def __post_init__(self):
        if self.improvement is None:
            try:
                self.improvement = improvement_pct(self.cnn.mean, self.lsmc.mean)
            except ValueError:
                self.improvement = math.nan  # reported as "undefined"

    @property
    def improvement_display(self) -> int | None:
        return None if math.isnan(self.improvement) else display_pct(self.improvement)

    def to_dict(self):
        return {"sector": self.sector, "asset": self.label, "mean_return": self.mean_return,
                "return_std": self.return_std, "cnn": self.cnn.to_dict(), "lsmc": self.lsmc.to_dict(),
                "improvement_pct": _json_float(self.improvement), "improvement_std": _json_float(self.improvement_std),
                "n_assets": self.n_assets}

    @classmethod
    def from_dict(cls, d):
        return cls(d["asset"], EvalStats.from_dict(d["cnn"]), EvalStats.from_dict(d["lsmc"]),
                   float(d["mean_return"]), float(d["return_std"]), d.get("sector", ""),
                   _from_json(d["improvement_pct"]), _from_json(d.get("improvement_std", 0.0)),
                   int(d.get("n_assets", 1)))


def _json_float(x):
    return None if math.isnan(x) else x


def _from_json(x):
    return math.nan if x is None else float(x)


def _shown(row):
    shown = row.improvement_display
    return "undefined" if shown is None else str(shown)


def _mean(values):
    return math.fsum(values) / len(values)


def aggregate_sector(rows, label: str | None = None) -> ComparisonRow:
    """Column-wise arithmetic mean of asset rows.

    The improvement is the mean of the per-asset improvements, not the ratio
    of mean payoffs. Standard deviations are averaged as well. An undefined
    asset improvement makes the sector improvement undefined.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("cannot aggregate an empty list of rows")
    if len(rows) == 1:
        return rows[0]
    cnn = EvalStats(_mean([r.cnn.mean for r in rows]), _mean([r.cnn.std for r in rows]),
                    int(round(_mean([r.cnn.n for r in rows]))))
    lsmc = EvalStats(_mean([r.lsmc.mean for r in rows]), _mean([r.lsmc.std for r in rows]),
                     int(round(_mean([r.lsmc.n for r in rows]))))
    imp = [r.improvement for r in rows]
    if label is None:
        label = rows[0].sector or rows[0].label
    return ComparisonRow(label, cnn, lsmc, _mean([r.mean_return for r in rows]),
                         _mean([r.return_std for r in rows]), rows[0].sector,
                         _mean(imp), float(np.std(imp)), sum(r.n_assets for r in rows))


def european_stats(paths: PathBatch, params: MarketParams, discounted: bool = True) -> EvalStats:
    """Payoff of the policy that only ever exercises at maturity."""
    return EvalStats.from_values(payoff_matrix(paths, params, discounted)[:, -1])


def clairvoyant_stats(paths: PathBatch, params: MarketParams, discounted: bool = True) -> EvalStats:
    """Path-wise hindsight maximum over dates ``1..N``; no policy can beat it."""
    return EvalStats.from_values(payoff_matrix(paths, params, discounted)[:, 1:].max(axis=1))


def payoff_vs_steps(method: str, source, params: MarketParams, grid, *, seed: int, eval_paths: int,
                    fit_paths: int = 100_000, hyper=None, degree: int = 3, threads: int = 1,
                    eval_source=None):
    """Refit/retrain for each number of exercise dates and evaluate out of sample.

    ``method`` is ``"cnn"`` (needs ``hyper``) or ``"lsmc"``. Maturity stays
    fixed, so ``dt`` shrinks as ``N`` grows. Returns ``[(N, EvalStats), ...]``.
    """
    from . import deepstop, lsmc, rng

    eval_source = source if eval_source is None else eval_source
    series = []
    for n in grid:
        if n < 2:
            raise ValueError(f"every grid point needs N >= 2, got {n}")
        p_n = params.replace(steps=int(n))
        test = deepstop._draw(eval_source, p_n, eval_paths, rng.derive_seed(seed, "eval", n), threads)
        if method == "cnn":
            if hyper is None:
                raise ValueError("cnn sweep needs a TrainingConfig")
            policy = deepstop.train(source, p_n, hyper, rng.derive_seed(seed, "train", n), threads=threads)
            stats = deepstop.evaluate(policy, test, p_n)
        elif method == "lsmc":
            fit = deepstop._draw(source, p_n, fit_paths, rng.derive_seed(seed, "fit", n), threads)
            stats = lsmc.lsmc_apply(lsmc.lsmc_fit(fit, p_n, degree), test, p_n)
        else:
            raise ValueError(f"method must be 'cnn' or 'lsmc', got {method!r}")
        series.append((int(n), stats))
    return series


# ------------------------------------------------------------------- output


def _comparison_record(row: ComparisonRow):
    return [row.sector, row.label, repr(row.mean_return), repr(row.return_std), repr(row.cnn.mean),
            repr(row.cnn.std), repr(row.lsmc.mean), repr(row.lsmc.std), _shown(row)]


def _sectors(rows):
    groups = {}
    for r in rows:
        groups.setdefault(r.sector, []).append(r)
    return [dataclasses.replace(aggregate_sector(g, label=s), label=s) for s, g in groups.items()]


def _write_csv(path: Path, header, records):
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(records)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_dat(path, series, label="N"):
    path = Path(path)
    lines = [f"# {label} mean lo hi"]
    for x, stats in series:
        lo, hi = stats.ci95
        lines.append(f"{x!r} {stats.mean!r} {lo!r} {hi!r}")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_report(rows, out_dir, formats=("csv", "json", "dat"), series=None):
    """Write comparison/sector tables, a JSON summary and plot data.

    ``series`` maps a file stem to a ``[(x, EvalStats), ...]`` list and is
    only used for the ``dat`` format. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    sectors = _sectors(rows)
    written = []
    if "csv" in formats:
        _write_csv(out / "comparison.csv", COMPARISON_COLUMNS, [_comparison_record(r) for r in rows])
        _write_csv(out / "sectors.csv", SECTOR_COLUMNS, [
            [s.label, s.n_assets, repr(s.mean_return), repr(s.return_std), repr(s.cnn.mean), repr(s.cnn.std),
             repr(s.lsmc.mean), repr(s.lsmc.std), _shown(s), repr(s.improvement_std)]
            for s in sectors])
        written += [out / "comparison.csv", out / "sectors.csv"]
    if "json" in formats:
        imps = [r.improvement for r in rows]
        summary = {
            "n_assets": len(rows),
            "mean_improvement_pct": _json_float(_mean(imps)) if imps else None,
            "mean_cnn_payoff": _mean([r.cnn.mean for r in rows]) if rows else None,
            "mean_lsmc_payoff": _mean([r.lsmc.mean for r in rows]) if rows else None,
            "rows": [r.to_dict() for r in rows],
            "sectors": [s.to_dict() for s in sectors],
        }
        path = out / "summary.json"
        try:
            path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        written.append(path)
    if "dat" in formats and series:
        for name, s in series.items():
            write_dat(out / f"{name}.dat", s)
            written.append(out / f"{name}.dat")
    return written


def read_comparison_csv(path):
    """Parse ``comparison.csv`` back into dicts of typed values."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COMPARISON_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for rec in reader:
            d = {k: float(v) for k, v in rec.items() if k not in ("sector", "asset", "improvement_pct")}
            d.update(sector=rec["sector"], asset=rec["asset"], improvement_pct=None if rec["improvement_pct"] == "undefined" else int(rec["improvement_pct"]))
            out.append(d)
    return out
