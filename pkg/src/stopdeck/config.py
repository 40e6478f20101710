"""Experiment configuration files.

One ``section.key = value`` pair per line; ``#`` starts a comment. Booleans
are ``true``/``false``. Every key has a default except ``market.s0``,
``market.strike`` and ``generator.kind``.
"""

from __future__ import annotations

import difflib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .datafeed import ReturnSeries, SplitSpec, load_returns
from .deepstop import TrainingConfig
from .market import MarketParams
from .simulate import GeneratorSpec

REQUIRED = object()


class ConfigError(ValueError):
    pass


def _positive(v):
    return None if v > 0 else "must be > 0"


def _non_negative(v):
    return None if v >= 0 else "must be >= 0"


def _open_unit(v):
    return None if 0 < v < 1 else "must lie strictly inside (0, 1)"


def _unit_half_open(v):
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def _one_of(*choices):
    def check(v):
        return None if v in choices else f"must be one of {', '.join(choices)}"
    return check


def _at_least(lo):
    def check(v):
        return None if v >= lo else f"must be >= {lo}"
    return check


# key: (type, default, check)
SCHEMA = {
    "market.s0": (float, REQUIRED, _positive),
    "market.strike": (float, REQUIRED, _positive),
    "market.maturity": (float, 3.0, _positive),
    "market.rate": (float, 0.05, _non_negative),
    "market.dividend": (float, 0.0, _non_negative),
    "market.sigma": (float, 0.1, _non_negative),
    "market.steps": (int, 50, _at_least(1)),
    "market.option_kind": (str, "put", _one_of("put", "call")),
    "market.discounted": (bool, True, None),
    "generator.kind": (str, REQUIRED, _one_of("gbm", "fbm", "harmonic", "bootstrap")),
    "generator.hurst": (float, 0.7, _open_unit),
    "generator.ampl": (float, 0.2, _non_negative),
    "generator.freq1": (float, 0.3, _positive),
    "generator.freq2": (float, 2.0, _positive),
    "generator.noise_std": (float, 0.01, _non_negative),
    "generator.random_phase": (bool, True, None),
    "training.epochs": (int, 300, _at_least(0)),
    "training.batch": (int, 8192, _at_least(1)),
    "training.window": (int, 25, _at_least(5)),
    "training.optimizer": (str, "adam", _one_of("adam", "momentum")),
    "training.learning_rate": (float, 1e-3, _positive),
    "training.beta1": (float, 0.9, _unit_half_open),
    "training.beta2": (float, 0.999, _unit_half_open),
    "training.epsilon": (float, 1e-8, _positive),
    "training.momentum": (float, 0.9, _unit_half_open),
    "lsmc.degree": (int, 3, _at_least(0)),
    "lsmc.paths": (int, 100_000, _at_least(1)),
    "evaluation.paths": (int, 100_000, _at_least(2)),
    "evaluation.seed": (int, 0, _at_least(0)),
    "evaluation.checkpoint": (str, "", None),
    "data.csv": (str, "", None),
    "data.in_sample_frac": (float, 0.8, _open_unit),
    "data.train_frac": (float, 0.7, _open_unit),
    "data.label": (str, "", None),
    "data.sector": (str, "", None),
    "output.dir": (str, "", None),
    "report.inputs": (str, "", None),
    "bench.steps_grid": (str, "", None),
}


def _convert(key, raw, typ):
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError("expected true or false")
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key} = {text}: cannot parse as {typ.__name__} ({exc})") from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _unknown(key):
    hint = difflib.get_close_matches(key, SCHEMA, n=1, cutoff=0.6)
    if not hint:
        leaf = key.rsplit(".", 1)[-1]
        leaves = {k.rsplit(".", 1)[-1]: k for k in SCHEMA}
        close = difflib.get_close_matches(leaf, leaves, n=1, cutoff=0.6)
        hint = [leaves[close[0]]] if close else []
    suffix = f" (did you mean '{hint[0]}'?)" if hint else ""
    return ConfigError(f"unknown key '{key}'{suffix}")


def parse_pairs(text: str, origin: str = "<config>") -> list:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = body.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


@dataclass
class ExperimentConfig:
    market: MarketParams
    generator: GeneratorSpec
    training: TrainingConfig
    discounted: bool
    lsmc_degree: int
    lsmc_paths: int
    eval_paths: int
    eval_seed: int
    seed_explicit: bool
    checkpoint: str
    data_csv: str
    split: SplitSpec
    label: str
    sector: str
    out_dir: str
    report_inputs: list
    steps_grid: list
    returns: ReturnSeries | None = None
    threads: int = 1
    values: dict = field(default_factory=dict)

    def dump(self) -> str:
        """Resolved configuration in the input format, every key present."""
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in SCHEMA)


def resolve(pairs, env=None) -> ExperimentConfig:
    """Validate ``(key, raw value)`` pairs (last one wins) into a config."""
    env = os.environ if env is None else env
    values, explicit = {}, set()
    for key, raw in pairs:
        if key not in SCHEMA:
            raise _unknown(key)
        typ, _, check = SCHEMA[key]
        value = _convert(key, raw, typ)
        if check is not None and (msg := check(value)):
            raise ConfigError(f"{key} = {raw.strip()}: {msg}")
        values[key] = value
        explicit.add(key)
    for key, (_, default, _) in SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError(f"missing mandatory key '{key}'")
            values[key] = default
    if not values["output.dir"]:
        values["output.dir"] = env.get("STOPDECK_OUT", "") or "out"

    v = values
    try:
        market = MarketParams(v["market.s0"], v["market.strike"], v["market.maturity"], v["market.rate"],
                              v["market.dividend"], v["market.sigma"], v["market.steps"], v["market.option_kind"])
        training = TrainingConfig(v["training.epochs"], v["training.batch"], v["training.window"],
                                  v["training.optimizer"], v["training.learning_rate"], v["training.beta1"],
                                  v["training.beta2"], v["training.epsilon"], v["training.momentum"],
                                  v["market.discounted"])
        split = SplitSpec(v["data.in_sample_frac"], v["data.train_frac"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    returns = None
    if v["generator.kind"] == "bootstrap":
        if not v["data.csv"]:
            raise ConfigError("generator.kind = bootstrap requires data.csv")
        if not Path(v["data.csv"]).is_file():
            raise ConfigError(f"data.csv = {v['data.csv']}: file not found")
        try:
            returns = load_returns(v["data.csv"], label=v["data.label"] or None)
        except ValueError as exc:
            raise ConfigError(f"data.csv = {v['data.csv']}: {exc}") from None
    elif v["data.csv"] and not Path(v["data.csv"]).is_file():
        raise ConfigError(f"data.csv = {v['data.csv']}: file not found")
    generator = GeneratorSpec(v["generator.kind"], v["generator.hurst"], v["generator.ampl"], v["generator.freq1"],
                              v["generator.freq2"], v["generator.noise_std"], v["generator.random_phase"], returns)

    try:
        grid = [int(x) for x in v["bench.steps_grid"].split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bench.steps_grid = {v['bench.steps_grid']}: expected comma-separated integers") from None
    if any(n < 2 for n in grid):
        raise ConfigError(f"bench.steps_grid = {v['bench.steps_grid']}: every N must be >= 2")
    inputs = [x.strip() for x in v["report.inputs"].split(",") if x.strip()]

    return ExperimentConfig(
        market=market, generator=generator, training=training, discounted=v["market.discounted"],
        lsmc_degree=v["lsmc.degree"], lsmc_paths=v["lsmc.paths"], eval_paths=v["evaluation.paths"],
        eval_seed=v["evaluation.seed"], seed_explicit="evaluation.seed" in explicit,
        checkpoint=v["evaluation.checkpoint"], data_csv=v["data.csv"], split=split, label=v["data.label"],
        sector=v["data.sector"], out_dir=v["output.dir"], report_inputs=inputs, steps_grid=grid,
        returns=returns, values=values,
    )


def parse_config(path, overrides=(), env=None) -> ExperimentConfig:
    """Read and validate a config file; ``overrides`` are ``key=value`` strings applied last."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    pairs = parse_pairs(text, str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return resolve(pairs, env)
