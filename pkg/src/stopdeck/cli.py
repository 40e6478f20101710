"""``stopdeck`` command line.

Exit codes: 0 on success, 1 on a configuration error, 2 on any runtime
failure. Failures print one line ``stopdeck: error: <kind>: <reason>`` to
stderr. Every run writes ``resolved_config.txt`` next to its outputs; feeding
it back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench, datafeed, deepstop, lsmc
from .config import ConfigError, ExperimentConfig, parse_config
from .rng import derive_seed

SUBCOMMANDS = ("simulate", "train", "evaluate", "compare", "report")


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _progress(epoch, payoff, loss):
    print(f"epoch {epoch} payoff {payoff:.6f} loss {loss:.6f}", file=sys.stderr, flush=True)


class _Sources:
    """Training, fitting and evaluation path sources for one config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        if cfg.generator.kind == "bootstrap":
            self.train, self.validation, self.test = datafeed.split(cfg.returns, cfg.split)
            self.fit = cfg.returns.slice(0, len(self.train) + len(self.validation), ":in_sample")
            for name in ("train", "validation", "test"):
                seg = getattr(self, name)
                if len(seg) < cfg.market.steps:
                    raise datafeed.DataError(f"{name} segment has {len(seg)} returns, "
                                             f"need at least N={cfg.market.steps}")
        else:
            self.train = self.fit = self.test = cfg.generator
            self.validation = None

    def draw(self, which, batch, seed):
        return deepstop._draw(getattr(self, which), self.cfg.market, batch, seed, self.cfg.threads)


def _train(cfg, src, out: Path):
    policy = deepstop.train(src.train, cfg.market, cfg.training, derive_seed(cfg.eval_seed, "train"),
                            threads=cfg.threads, on_epoch=_progress)
    policy.save(out / "policy.json")
    with (out / "trace.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_payoff", "loss"])
        w.writerows([e, repr(p), repr(l)] for e, p, l in policy.trace)
    return policy


def _eval_paths(cfg, src):
    return src.draw("test", cfg.eval_paths, derive_seed(cfg.eval_seed, "eval"))


def _return_moments(cfg, paths):
    r = cfg.returns.returns if cfg.returns is not None else paths.returns().reshape(-1)
    x = r - 1.0
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0


def cmd_simulate(cfg, src, out):
    paths = _eval_paths(cfg, src)
    logret = np.log(paths.returns())
    terminal = paths.prices[:, -1]
    _write_json(out / "paths_summary.json", {
        "generator": cfg.generator.kind,
        "paths": paths.batch,
        "steps": paths.steps,
        "dt": paths.dt,
        "terminal": {"mean": float(terminal.mean()), "std": float(terminal.std(ddof=1)) if paths.batch > 1 else 0.0,
                     "min": float(terminal.min()), "max": float(terminal.max())},
        "log_return": {"mean": float(logret.mean()), "var": float(logret.var())},
        "mean_by_step": [float(v) for v in paths.prices.mean(axis=0)],
        "std_by_step": [float(v) for v in paths.prices.std(axis=0)],
    })


def cmd_train(cfg, src, out):
    _train(cfg, src, out)


def cmd_evaluate(cfg, src, out):
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "policy.json"
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    policy = deepstop.TrainedPolicy.load(ckpt)
    paths = _eval_paths(cfg, src)
    doc = {"cnn": deepstop.evaluate(policy, paths, cfg.market).to_dict(),
           "european": bench.european_stats(paths, cfg.market, policy.discounted).to_dict(),
           "clairvoyant": bench.clairvoyant_stats(paths, cfg.market, policy.discounted).to_dict()}
    _write_json(out / "eval.json", doc)


def cmd_compare(cfg, src, out):
    if not cfg.seed_explicit:
        raise ConfigError("compare needs an explicit seed (--seed or evaluation.seed)")
    policy = _train(cfg, src, out)
    fit_paths = src.draw("fit", cfg.lsmc_paths, derive_seed(cfg.eval_seed, "lsmc"))
    model = lsmc.lsmc_fit(fit_paths, cfg.market, cfg.lsmc_degree, cfg.discounted)
    model.save(out / "lsmc_model.json")

    paths = _eval_paths(cfg, src)
    cnn = deepstop.evaluate(policy, paths, cfg.market)
    base = lsmc.lsmc_apply(model, paths, cfg.market)
    doc = {"cnn": cnn.to_dict(), "lsmc": base.to_dict(),
           "lsmc_in_sample": model.in_sample.to_dict(),
           "european": bench.european_stats(paths, cfg.market, cfg.discounted).to_dict(),
           "clairvoyant": bench.clairvoyant_stats(paths, cfg.market, cfg.discounted).to_dict()}
    if src.validation is not None:
        val = src.draw("validation", cfg.eval_paths, derive_seed(cfg.eval_seed, "validation"))
        doc["validation"] = {"cnn": deepstop.evaluate(policy, val, cfg.market).to_dict(),
                             "lsmc": lsmc.lsmc_apply(model, val, cfg.market).to_dict()}
    _write_json(out / "eval.json", doc)

    mean_ret, ret_std = _return_moments(cfg, paths)
    label = cfg.label or (cfg.returns.label if cfg.returns is not None else cfg.generator.kind)
    row = bench.ComparisonRow(label, cnn, base, mean_ret, ret_std, cfg.sector or "simulated")
    _write_json(out / "comparison_row.json", row.to_dict())

    series = None
    if cfg.steps_grid:
        kw = dict(seed=derive_seed(cfg.eval_seed, "sweep"), eval_paths=cfg.eval_paths, threads=cfg.threads,
                  eval_source=src.test)
        series = {
            "cnn_vs_steps": bench.payoff_vs_steps("cnn", src.train, cfg.market, cfg.steps_grid,
                                                  hyper=cfg.training, **kw),
            "lsmc_vs_steps": bench.payoff_vs_steps("lsmc", src.fit, cfg.market, cfg.steps_grid,
                                                   fit_paths=cfg.lsmc_paths, degree=cfg.lsmc_degree, **kw),
        }
    bench.emit_report([row], out, series=series)


def cmd_report(cfg, src, out):
    if not cfg.report_inputs:
        raise ConfigError("report needs report.inputs (comma-separated run directories)")
    rows = []
    for d in cfg.report_inputs:
        path = Path(d) / "comparison_row.json"
        if not path.is_file():
            raise FileNotFoundError(f"{path} not found")
        rows.append(bench.ComparisonRow.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    bench.emit_report(rows, out)


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "compare": cmd_compare, "report": cmd_report}


def run(subcommand: str, cfg: ExperimentConfig, overrides=()) -> int:
    """Execute one subcommand; returns the process exit code.

    ``overrides`` are extra ``key=value`` settings applied on top of ``cfg``.
    """
    if overrides:
        try:
            cfg = _reparse(cfg, overrides)
        except ConfigError as exc:
            return _fail(1, "config", str(exc))
    if subcommand not in COMMANDS:
        return _fail(1, "config", f"unknown subcommand {subcommand!r}")
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.txt").write_text(cfg.dump(), encoding="utf-8")
        src = _Sources(cfg) if subcommand != "report" else None
        with threadpool_limits(limits=1):
            COMMANDS[subcommand](cfg, src, out)
    except ConfigError as exc:
        return _fail(1, "config", str(exc))
    except (deepstop.TrainingDiverged, datafeed.DataError) as exc:
        return _fail(2, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit 2
        return _fail(2, type(exc).__name__, str(exc) or repr(exc))
    return 0


def _reparse(cfg, overrides):
    from .config import parse_pairs, resolve

    pairs = parse_pairs(cfg.dump())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    new = resolve(pairs)
    new.threads = cfg.threads
    new.seed_explicit = new.seed_explicit and (cfg.seed_explicit or any(
        o.split("=", 1)[0].strip() == "evaluation.seed" for o in overrides))
    return new


def _fail(code, kind, reason):
    reason = " ".join(str(reason).split())
    print(f"stopdeck: error: {kind}: {reason}", file=sys.stderr)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="stopdeck", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, metavar="FILE")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                    help="override a config key; repeatable, last wins")
    ap.add_argument("--seed", type=int, help="shorthand for --set evaluation.seed=SEED")
    ap.add_argument("--threads", type=int, default=1, help="path-generation workers (results do not depend on it)")
    ap.add_argument("--out", metavar="DIR", help="output directory (default: output.dir, then $STOPDECK_OUT)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    if args.threads < 1:
        return _fail(1, "config", f"--threads must be >= 1, got {args.threads}")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"evaluation.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output.dir={args.out}")
    try:
        cfg = parse_config(args.config, overrides)
    except ValueError as exc:
        return _fail(1, "config", str(exc))
    cfg.threads = args.threads
    return run(args.subcommand, cfg)
