"""End-to-end acceptance checks, one test (or test group) per criterion.

Each test tags itself with ``record_property("criterion", ...)``; the
terminal summary prints one PASS/FAIL line per criterion.
"""

import json
import math

import numpy as np
import pytest

from _oracles import best_step, crr_bermudan
from stopdeck import deepstop
from stopdeck.bench import (ComparisonRow, EvalStats, aggregate_sector, clairvoyant_stats, display_pct,
                            european_stats, improvement_pct)
from stopdeck.cli import main
from stopdeck.datafeed import SplitSpec, load_returns, split
from stopdeck.deepstop import PolicySpec, TrainingConfig, build_policy_net, evaluate, stopping_steps, train
from stopdeck.lsmc import exercise_steps, lsmc_apply, lsmc_fit
from stopdeck.market import MarketParams, payoff_matrix
from stopdeck.rng import derive_seed
from stopdeck.simulate import GeneratorSpec, fbm_covariance, gen_fbm, gen_gbm
from stopdeck.tensornet import grad_check, relu_margin

TABLE1 = dict(s0=120.0, strike=100.0, maturity=3.0, rate=0.05)


@pytest.fixture(scope="module")
def tree_price():
    return crr_bermudan(120, 100, 3, 0.05, 0.1, 0.1, dates=50, tree_steps=2000)


# 1 ---------------------------------------------------------------- metrics


def test_metric_reproduction(record_property):
    record_property("criterion", "1 metric reproduction")
    assert display_pct(improvement_pct(6.67, 0.64)) == 1042
    assert display_pct(improvement_pct(6.07, 1.19)) == 510

    def sector(values):
        rows = [ComparisonRow(f"a{i}", EvalStats(1, 0, 1), EvalStats(1, 0, 1), improvement=float(v))
                for i, v in enumerate(values)]
        return aggregate_sector(rows).improvement_display

    assert sector([826, 424, 539, 1042, 510]) == 668
    assert sector([433, 1310, 1078, 687, 1212]) == 944


# 2 ---------------------------------------------------------- LSMC vs tree


def test_lsmc_matches_tree(record_property, table1_gbm, tree_price):
    record_property("criterion", "2 LSMC vs tree oracle")
    paths = gen_gbm(table1_gbm, 100_000, seed=20_240_601)
    model = lsmc_fit(paths, table1_gbm, degree=3)
    rel = abs(model.in_sample.mean - tree_price) / tree_price
    print(f"\nLSMC in-sample {model.in_sample.mean:.5f} (se {model.in_sample.se:.5f}) "
          f"tree {tree_price:.5f} rel {rel:.4%}")
    assert rel < 0.01


# 3 ----------------------------------------------------- deep policy vs tree


@pytest.mark.slow
def test_deep_policy_matches_tree(record_property, table1_gbm, tree_price):
    record_property("criterion", "3 deep policy vs tree oracle")
    hyper = TrainingConfig(epochs=300, batch=8192)
    policy = train(GeneratorSpec("gbm"), table1_gbm, hyper, seed=7)
    paths = gen_gbm(table1_gbm, 100_000, seed=derive_seed(7, "fresh"))
    s = evaluate(policy, paths, table1_gbm)
    rel = abs(s.mean - tree_price) / tree_price
    print(f"\nCNN {s.mean:.5f} (se {s.se:.5f}) tree {tree_price:.5f} rel {rel:.4%} "
          f"early {(stopping_steps(policy, paths, table1_gbm) < 50).mean():.4f}")
    assert rel < 0.02
    assert s.mean <= tree_price + 2 * s.se


# 4 ------------------------------------------------------- gradient check


def test_gradient_check_full_architecture(record_property):
    record_property("criterion", "4 gradient correctness")
    spec = PolicySpec(window=25)
    net = build_policy_net(spec, seed=11)
    rng = np.random.default_rng(12)
    # central differences are only a valid oracle away from ReLU kinks
    for _ in range(1000):
        x = rng.normal(size=(4, 5, 25))
        if relu_margin(net, x) > 1e-3:
            break
    else:
        pytest.fail("no kink-free input found")
    w = rng.normal(size=(4, 1))
    err = grad_check(net, x, lambda out: (float(np.sum(w * out)), w), eps=1e-5)
    print(f"\nmax relative error {err:.3e} over {net.n_params()} parameters")
    assert err < 1e-4


# 5 ---------------------------------------------------------- fBm fidelity


def test_fbm_fidelity(record_property):
    record_property("criterion", "5 fBm fidelity")
    n_paths = 100_000
    params = MarketParams(1.0, 1.0, maturity=1.0, sigma=1.0, steps=100)
    b = np.log(gen_fbm(params, 0.7, n_paths, seed=5).prices[:, 1:])
    t = np.arange(1, 101) * params.dt
    pairs = np.random.default_rng(2024).integers(0, 100, size=(10, 2))
    worst = 0.0
    for i, j in pairs:
        emp = float(np.mean(b[:, i] * b[:, j]))
        worst = max(worst, abs(emp / fbm_covariance(t[i], t[j], 0.7) - 1))
    print(f"\nworst relative covariance gap {worst:.4f}")
    assert worst < 0.05

    w = np.log(gen_fbm(params, 0.5, n_paths, seed=6).prices[:, 1:])
    for k in (9, 49, 99):
        col = w[:, k]
        var = t[k]
        assert abs(col.mean()) < 4 * math.sqrt(var / n_paths)
        # sample variance of a normal has standard error var * sqrt(2 / n)
        assert abs(col.var(ddof=1) - var) < 4 * var * math.sqrt(2 / n_paths)
    inc = np.diff(w[:, :50], axis=1)
    corr = np.corrcoef(inc[:, 10], inc[:, 11])[0, 1]
    assert abs(corr) < 4 / math.sqrt(n_paths)


# 6, 7 ------------------------------------------------- generator orderings

N_ORDER = 25
ORDER_HYPER = TrainingConfig(epochs=150, batch=2048, window=25)


def _synthetic_csv(path, n=3000, seed=0):
    rng = np.random.default_rng(seed)
    r = rng.lognormal(0.0001, 0.012, n)
    prices = 100 * np.cumprod(np.concatenate([[1.0], r]))
    days = np.datetime64("2000-01-03") + np.arange(n + 1)
    path.write_text("date,close\n" + "".join(f"{d},{p:.6f}\n" for d, p in zip(days, prices)))


@pytest.fixture(scope="module")
def ordering_runs(tmp_path_factory):
    """Train, fit and evaluate on each generator once; shared by criteria 6 and 7."""
    csv_path = tmp_path_factory.mktemp("data") / "SYN.csv"
    _synthetic_csv(csv_path)
    runs = {}
    for kind in ("gbm", "fbm", "harmonic", "bootstrap"):
        if kind == "gbm":
            params = MarketParams(**TABLE1, dividend=0.1, sigma=0.1, steps=N_ORDER)
        elif kind == "bootstrap":
            params = MarketParams(100.0, 100.0, maturity=N_ORDER / 252, rate=0.05, steps=N_ORDER)
        else:
            params = MarketParams(**TABLE1, sigma=0.1, steps=N_ORDER)
        if kind == "bootstrap":
            series = load_returns(csv_path)
            train_seg, val_seg, test_seg = split(series, SplitSpec(0.8, 0.7))
            in_sample = series.slice(0, len(train_seg) + len(val_seg))
            train_src, fit_src, test_src = train_seg, in_sample, test_seg
        else:
            train_src = fit_src = test_src = GeneratorSpec(kind, hurst=0.7, noise_std=0.01, random_phase=True)
        policy = train(train_src, params, ORDER_HYPER, seed=derive_seed(1, kind))
        model = lsmc_fit(deepstop._draw(fit_src, params, 20_000, derive_seed(2, kind), 1), params)
        test = deepstop._draw(test_src, params, 20_000, derive_seed(3, kind), 1)
        runs[kind] = dict(params=params, cnn=evaluate(policy, test, params), lsmc=lsmc_apply(model, test, params),
                          european=european_stats(test, params), clairvoyant=clairvoyant_stats(test, params))
    return runs


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["gbm", "fbm", "harmonic", "bootstrap"])
def test_ordering_properties(record_property, ordering_runs, kind):
    record_property("criterion", "6 ordering properties")
    r = ordering_runs[kind]
    eu, cl = r["european"], r["clairvoyant"]
    print(f"\n{kind}: european {eu.mean:.4f} cnn {r['cnn'].mean:.4f} lsmc {r['lsmc'].mean:.4f} "
          f"clairvoyant {cl.mean:.4f}")
    for name in ("cnn", "lsmc"):
        s = r[name]
        assert eu.mean - 2 * eu.se <= s.mean, name
        assert s.mean <= cl.mean + 2 * cl.se, name


@pytest.mark.slow
def test_harmonic_advantage(record_property, ordering_runs):
    record_property("criterion", "7 harmonic advantage")
    r = ordering_runs["harmonic"]
    cnn, eu = r["cnn"], r["european"]
    se = math.hypot(cnn.se, eu.se)
    print(f"\nharmonic: cnn {cnn.mean:.4f} european {eu.mean:.4f} gap {(cnn.mean - eu.mean) / se:.1f} SE")
    assert cnn.mean - eu.mean >= 5 * se


# 8 ------------------------------------------------------------ determinism

DETERMINISM_CONF = """\
market.s0 = 120
market.strike = 100
market.maturity = 3
market.rate = 0.05
market.dividend = 0.1
market.sigma = 0.1
market.steps = 10
generator.kind = fbm
generator.hurst = 0.7
training.epochs = 5
training.batch = 1024
training.window = 10
lsmc.paths = 20000
evaluation.paths = 20000
"""


def test_cli_determinism(record_property, tmp_path):
    record_property("criterion", "8 determinism")
    conf = tmp_path / "run.conf"
    conf.write_text(DETERMINISM_CONF)
    outputs = []
    for name, threads in (("a", 2), ("b", 2), ("c", 1), ("d", 5)):
        out = tmp_path / name
        assert main(["compare", "--config", str(conf), "--seed", "2024", "--threads", str(threads),
                     "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in out.iterdir()
                        if p.is_file() and p.name != "resolved_config.txt"})
    assert outputs[0]["comparison.csv"] == outputs[1]["comparison.csv"]
    assert outputs[0] == outputs[1] == outputs[2] == outputs[3]
    assert json.loads(outputs[0]["comparison_row.json"])["cnn"]["n"] == 20_000


# 9 ------------------------------------------------------ brute-force oracle


def test_brute_force_optimal_step(record_property):
    record_property("criterion", "9 brute-force oracle equivalence")
    # sigma = 0 and dividend > rate: prices fall deterministically, the put's discounted payoff
    # rises then decays, with a unique maximum
    params = MarketParams(100, 100, maturity=8, rate=0.1, dividend=0.6, sigma=0.0, steps=8)
    paths = gen_gbm(params, 512, seed=0)
    assert np.all(np.diff(paths.prices, axis=1) < 0)
    step, value = best_step(paths.prices[0], params.strike, params.rate, params.dt)
    assert step == 4

    model = lsmc_fit(paths, params)
    assert np.all(exercise_steps(model, paths, params) == step)

    policy = train(GeneratorSpec("gbm"), params, TrainingConfig(epochs=300, batch=256), seed=1)
    assert np.all(stopping_steps(policy, paths, params) == step)
    assert evaluate(policy, paths, params).mean == pytest.approx(value, rel=1e-12)
    assert payoff_matrix(paths, params)[0].argmax() == step
