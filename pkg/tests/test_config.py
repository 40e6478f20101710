import pytest

from stopdeck.config import REQUIRED, SCHEMA, ConfigError, parse_config, parse_pairs, resolve

TABLE1_GBM = """\
# geometric Brownian motion block
market.s0 = 120
market.strike = 100
market.maturity = 3
market.rate = 0.05
market.dividend = 0.1   # dividend yield
market.sigma = 0.1
generator.kind = gbm
"""


def _write(tmp_path, text, name="run.conf"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_table1_gbm_block(tmp_path):
    cfg = parse_config(_write(tmp_path, TABLE1_GBM), env={})
    m = cfg.market
    assert (m.s0, m.strike, m.maturity, m.rate, m.dividend, m.sigma) == (120, 100, 3, 0.05, 0.1, 0.1)
    assert cfg.generator.kind == "gbm"
    assert cfg.training.epochs == 300 and cfg.training.batch == 8192 and cfg.training.window == 25
    assert cfg.lsmc_degree == 3 and not cfg.seed_explicit


def test_hurst_out_of_range(tmp_path):
    with pytest.raises(ConfigError, match=r"generator\.hurst = 1\.5.*\(0, 1\)"):
        parse_config(_write(tmp_path, TABLE1_GBM + "generator.hurst = 1.5\n"), env={})


def test_unknown_key_suggests_fix(tmp_path):
    with pytest.raises(ConfigError, match=r"market\.stirke.*market\.strike"):
        parse_config(_write(tmp_path, TABLE1_GBM + "market.stirke = 100\n"), env={})
    with pytest.raises(ConfigError, match=r"'stirke'.*market\.strike"):
        parse_config(_write(tmp_path, TABLE1_GBM + "stirke = 100\n", "b.conf"), env={})


@pytest.mark.parametrize("key", ["market.s0", "market.strike", "generator.kind"])
def test_missing_mandatory_key(tmp_path, key):
    text = "\n".join(line for line in TABLE1_GBM.splitlines() if not line.startswith(key))
    with pytest.raises(ConfigError, match=f"missing mandatory key '{key}'"):
        parse_config(_write(tmp_path, text), env={})


def test_every_other_key_has_default():
    required = {k for k, (_, d, _) in SCHEMA.items() if d is REQUIRED}
    assert required == {"market.s0", "market.strike", "generator.kind"}


@pytest.mark.parametrize("line,frag", [
    ("market.steps = two", "cannot parse as int"),
    ("market.sigma = -0.1", "market.sigma = -0.1: must be >= 0"),
    ("market.option_kind = straddle", "must be one of put, call"),
    ("market.discounted = maybe", "true or false"),
    ("training.optimizer = sgd", "training.optimizer"),
    ("training.window = 4", "training.window = 4"),
    ("data.train_frac = 1", "data.train_frac"),
    ("bench.steps_grid = 5,x", "bench.steps_grid"),
    ("just some words", "expected 'key = value'"),
])
def test_invariant_violations_name_key_and_value(tmp_path, line, frag):
    with pytest.raises(ConfigError, match=frag.replace(".", r"\.").replace("(", r"\(").replace(")", r"\)")):
        parse_config(_write(tmp_path, TABLE1_GBM + line + "\n"), env={})


def test_overrides_are_last_wins(tmp_path):
    path = _write(tmp_path, TABLE1_GBM + "market.steps = 10\nmarket.steps = 12\n")
    assert parse_config(path, env={}).market.steps == 12
    cfg = parse_config(path, ["market.steps=20", "market.steps = 30", "evaluation.seed=4"], env={})
    assert cfg.market.steps == 30 and cfg.eval_seed == 4 and cfg.seed_explicit
    assert "market.steps = 30\n" in cfg.dump()


def test_output_dir_fallbacks(tmp_path):
    path = _write(tmp_path, TABLE1_GBM)
    assert parse_config(path, env={}).out_dir == "out"
    assert parse_config(path, env={"STOPDECK_OUT": "/x"}).out_dir == "/x"
    assert parse_config(path, ["output.dir=/y"], env={"STOPDECK_OUT": "/x"}).out_dir == "/y"


def test_dump_round_trips(tmp_path):
    cfg = parse_config(_write(tmp_path, TABLE1_GBM + "generator.hurst = 0.65\nbench.steps_grid = 5, 10\n"), env={})
    again = resolve(parse_pairs(cfg.dump()), env={})
    assert again.dump() == cfg.dump()
    assert again.market == cfg.market and again.training == cfg.training and again.steps_grid == [5, 10]
    assert set(again.values) == set(SCHEMA)


def test_bootstrap_requires_existing_csv(tmp_path):
    base = TABLE1_GBM.replace("generator.kind = gbm", "generator.kind = bootstrap")
    with pytest.raises(ConfigError, match="requires data.csv"):
        parse_config(_write(tmp_path, base), env={})
    with pytest.raises(ConfigError, match="file not found"):
        parse_config(_write(tmp_path, base + "data.csv = nowhere.csv\n"), env={})
    csv = tmp_path / "p.csv"
    csv.write_text("date,close\n2020-01-01,100\n2020-01-02,0\n")
    with pytest.raises(ConfigError, match="row 3"):
        parse_config(_write(tmp_path, base + f"data.csv = {csv}\n"), env={})
    csv.write_text("date,close\n2020-01-01,100\n2020-01-02,101\n2020-01-03,99\n")
    cfg = parse_config(_write(tmp_path, base + f"data.csv = {csv}\n"), env={})
    assert len(cfg.returns) == 2 and cfg.generator.source is cfg.returns


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.conf")
