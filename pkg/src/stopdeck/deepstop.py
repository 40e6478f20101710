"""Convolutional stopping policy trained by backward recursion over exercise dates.

One network is shared by all dates. At date ``t`` it sees a five-channel
window of length ``W``:

1. the last ``W`` relative returns ``S_u / S_{u-1}`` ending at ``t``, left-padded
   with 1.0 before the first observed return;
2. the current (discounted) payoff divided by the strike;
3. ``t / N``;
4. the risk-free rate;
5. ``K / s0``.

Channels 2-5 are constant along the window.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as _rng
from . import simulate, tensornet
from ._stats import EvalStats
from .datafeed import ReturnSeries
from .market import MarketParams, PathBatch, payoff_matrix

log = logging.getLogger(__name__)

N_CHANNELS = 5
_EVAL_CHUNK = 16384


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicySpec:
    window: int = 25
    channels: int = N_CHANNELS
    conv_maps: int = 6
    kernel: int = 3
    hidden: int = 50

    def __post_init__(self):
        if self.window < 2 * self.kernel - 1:
            raise ValueError(f"window must be >= {2 * self.kernel - 1} for two valid convolutions, got {self.window}")

    def layers(self):
        flat = self.conv_maps * (self.window - 2 * (self.kernel - 1))
        return [
            {"type": "conv1d", "in_channels": self.channels, "out_channels": self.conv_maps,
             "kernel": self.kernel, "activation": "relu"},
            {"type": "conv1d", "in_channels": self.conv_maps, "out_channels": self.conv_maps,
             "kernel": self.kernel, "activation": "relu"},
            {"type": "flatten"},
            {"type": "dense", "in_features": flat, "out_features": self.hidden, "activation": "relu"},
            {"type": "dense", "in_features": self.hidden, "out_features": self.hidden, "activation": "relu"},
            {"type": "dense", "in_features": self.hidden, "out_features": 1, "activation": "sigmoid"},
        ]


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 300
    batch: int = 8192
    window: int = 25
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.9
    discounted: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError(f"optimizer must be 'adam' or 'momentum', got {self.optimizer!r}")
        PolicySpec(window=self.window)
        self.new_optimizer()

    def new_optimizer(self):
        if self.optimizer == "adam":
            return tensornet.AdamState(self.learning_rate, self.beta1, self.beta2, self.epsilon)
        return tensornet.MomentumState(self.learning_rate, self.momentum)

    def digest(self, params: MarketParams | None = None, seed=None) -> str:
        doc = {"training": asdict(self), "market": asdict(params) if params else None, "seed": seed}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainedPolicy:
    spec: PolicySpec
    net: tensornet.Network
    discounted: bool = True
    config_hash: str = ""
    trace: list = field(default_factory=list)  # (epoch, mean_payoff, loss)
    optimizer: object = None

    def save(self, path):
        extra = {"policy": {"spec": asdict(self.spec), "discounted": self.discounted},
                 "trace": [list(row) for row in self.trace]}
        tensornet.save_network(path, self.net, self.optimizer, self.config_hash, extra)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        net, opt = tensornet.network_from_dict(doc)
        pol = doc["policy"]
        trace = [(int(e), float(p), float(l)) for e, p, l in doc.get("trace", [])]
        return cls(PolicySpec(**pol["spec"]), net, bool(pol["discounted"]), doc.get("config_hash", ""), trace, opt)


def build_policy_net(spec: PolicySpec, seed: int = 0) -> tensornet.Network:
    return tensornet.build_network(spec.layers(), (spec.channels, spec.window), seed=seed)


def build_state(paths: PathBatch, t: int, params: MarketParams, window: int,
                payoffs: np.ndarray | None = None, discounted: bool = True) -> np.ndarray:
    """State tensor of shape ``(batch, 5, window)`` at exercise date ``t``.

    ``payoffs`` may pass a precomputed :func:`payoff_matrix` to avoid
    recomputing it for every date.
    """
    n = paths.steps
    if not 1 <= t <= n:
        raise ValueError(f"state date t={t} outside 1..{n}")
    if payoffs is None:
        payoffs = payoff_matrix(paths, params, discounted)
    b = paths.batch
    state = np.empty((b, N_CHANNELS, window))
    first = t - window + 1  # date of the oldest return in the window
    returns = state[:, 0, :]
    lo = max(first, 1)
    pad = lo - first
    returns[:, :pad] = 1.0
    returns[:, pad:] = paths.prices[:, lo : t + 1] / paths.prices[:, lo - 1 : t]
    state[:, 1, :] = (payoffs[:, t] / params.strike)[:, None]
    state[:, 2, :] = t / n
    state[:, 3, :] = params.rate
    state[:, 4, :] = params.strike / params.s0
    return state


def _draw(source, params, batch, seed, threads):
    if isinstance(source, simulate.GeneratorSpec):
        return simulate.generate(source, params, batch, seed, threads)
    if isinstance(source, ReturnSeries):
        return simulate.gen_bootstrap(source, params, batch, seed, threads)
    return source(batch, seed)


def recursion_loss(net: tensornet.Network, paths: PathBatch, params: MarketParams, window: int,
                   discounted: bool = True, with_grad: bool = True):
    """Backward-recursive stopping objective on one batch of paths.

    Starting from forced exercise at maturity, ``g = p[:, N]``, the dates
    ``t = N-1 .. 1`` are visited backwards. At each date the soft decision
    ``a = net(state_t)`` contributes ``-mean(p_t a + g (1 - a))`` to the loss,
    then ``g`` takes ``p_t`` wherever ``a > 0.5``.

    Returns
    -------
    loss : float
    payoff : float
        ``mean(g)`` after the sweep, the payoff of the hard policy on this batch.
    grads : list of numpy.ndarray or None
        dLoss/dParams, treating ``g`` as a constant at each date.
    """
    p = payoff_matrix(paths, params, discounted)
    n, b = paths.steps, paths.batch
    g = p[:, n].copy()
    loss = 0.0
    grads = [np.zeros_like(w) for w in net.params()] if with_grad else None
    for t in range(n - 1, 0, -1):
        pt = p[:, t]
        # where p_t == g the decision changes neither the objective nor g
        live = np.flatnonzero(pt != g)
        total = float(np.sum(g[pt == g]))
        if live.size:
            sub = PathBatch(paths.prices[live], paths.dt)
            state = build_state(sub, t, params, window, payoffs=p[live])
            a, cache = net.forward(state)
            a = a[:, 0]
            pl, gl = pt[live], g[live]
            total += float(np.sum(pl * a + gl * (1.0 - a)))
            if with_grad:
                upstream = (-(pl - gl) / b)[:, None]
                for acc, gw in zip(grads, net.backward(cache, upstream)):
                    acc += gw
            g[live] = np.where(a > 0.5, pl, gl)
        loss -= total / b
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at date t={t}")
    return loss, float(np.mean(g)), grads


def train(source, params: MarketParams, hyper: TrainingConfig, seed: int, *, threads: int = 1,
          on_epoch=None) -> TrainedPolicy:
    """Fit a stopping policy with one optimizer step per freshly drawn batch.

    ``source`` is a :class:`~stopdeck.simulate.GeneratorSpec`, a
    :class:`~stopdeck.datafeed.ReturnSeries` (bootstrapped), or a callable
    ``(batch, seed) -> PathBatch``.
    """
    spec = PolicySpec(window=hyper.window)
    net = build_policy_net(spec, seed=_rng.derive_seed(seed, "init"))
    opt = hyper.new_optimizer()
    policy = TrainedPolicy(spec, net, hyper.discounted, hyper.digest(params, seed), [], opt)
    for epoch in range(1, hyper.epochs + 1):
        paths = _draw(source, params, hyper.batch, _rng.derive_seed(seed, "train", epoch), threads)
        try:
            loss, payoff, grads = recursion_loss(net, paths, params, hyper.window, hyper.discounted)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from None
        tensornet.optimizer_step(net, grads, opt)
        policy.trace.append((epoch, payoff, loss))
        if on_epoch is not None:
            on_epoch(epoch, payoff, loss)
        log.debug("epoch %d payoff %.6f loss %.6f", epoch, payoff, loss)
    return policy


def stop_probability(policy: TrainedPolicy, state: np.ndarray) -> np.ndarray:
    """Sigmoid head output for each state row; stop iff it exceeds 0.5."""
    return policy.net.predict(state)[:, 0]


def stopping_steps(policy: TrainedPolicy, paths: PathBatch, params: MarketParams) -> np.ndarray:
    """First date in ``1..N-1`` with stop probability above 0.5, else ``N``."""
    n = paths.steps
    p = payoff_matrix(paths, params, policy.discounted)
    stops = np.full(paths.batch, n, dtype=np.int64)
    alive = np.ones(paths.batch, dtype=bool)
    for t in range(1, n):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        for a in range(0, idx.size, _EVAL_CHUNK):
            rows = idx[a : a + _EVAL_CHUNK]
            sub = PathBatch(paths.prices[rows], paths.dt)
            state = build_state(sub, t, params, policy.spec.window, payoffs=p[rows])
            hit = rows[stop_probability(policy, state) > 0.5]
            stops[hit] = t
            alive[hit] = False
    return stops


def evaluate(policy: TrainedPolicy, paths: PathBatch, params: MarketParams) -> EvalStats:
    """Payoff statistics of the hard policy scanned forward along each path."""
    stops = stopping_steps(policy, paths, params)
    p = payoff_matrix(paths, params, policy.discounted)
    return EvalStats.from_values(p[np.arange(paths.batch), stops])
