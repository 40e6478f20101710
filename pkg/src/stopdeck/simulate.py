"""Price path generators: GBM, fractional Brownian motion, harmonic and bootstrap.

All generators draw from :mod:`stopdeck.rng`, keyed by ``(seed, generator
tag)`` and indexed by ``(path index, step)``. A path depends only on its seed
and index, never on the batch size or the number of worker threads.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .datafeed import DataError, ReturnSeries
from .market import MarketParams, PathBatch

GENERATOR_KINDS = ("gbm", "fbm", "harmonic", "bootstrap")

_CHUNK = 8192


class FactorizationError(RuntimeError):
    """The fBm covariance matrix could not be Cholesky-factorized."""


@dataclass(frozen=True)
class GeneratorSpec:
    """Which generator to use and its shape parameters.

    ``freq1``/``freq2`` are in cycles per year and ``noise_std`` is the
    standard deviation of the harmonic's additive noise as a fraction of s0.
    """

    kind: str
    hurst: float = 0.7
    ampl: float = 0.2
    freq1: float = 0.3
    freq2: float = 2.0
    noise_std: float = 0.01
    random_phase: bool = True
    source: ReturnSeries | None = None

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"generator kind must be one of {GENERATOR_KINDS}, got {self.kind!r}")
        if not 0 < self.hurst < 1:
            raise ValueError(f"hurst must lie strictly inside (0, 1), got {self.hurst!r}")
        if not (self.freq1 > 0 and self.freq2 > 0):
            raise ValueError(f"harmonic frequencies must be positive, got {self.freq1!r}, {self.freq2!r}")
        if self.ampl < 0:
            raise ValueError(f"ampl must be non-negative, got {self.ampl!r}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std!r}")
        if self.kind == "bootstrap" and self.source is None:
            raise ValueError("bootstrap generator needs a ReturnSeries source")


def _rows(batch: int, fn, threads: int = 1) -> np.ndarray:
    """Evaluate ``fn(path_indices)`` in fixed chunks and stack the results."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    chunks = [np.arange(a, min(a + _CHUNK, batch)) for a in range(0, batch, _CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def gen_gbm(params: MarketParams, batch: int, seed: int, threads: int = 1) -> PathBatch:
    """Exact log-Euler geometric Brownian motion with dividend yield."""
    key = rng.derive_seed(seed, "gbm")
    n, dt = params.steps, params.dt
    drift = (params.rate - params.dividend - 0.5 * params.sigma**2) * dt
    vol = params.sigma * math.sqrt(dt)
    steps = np.arange(n)

    def block(idx):
        z = rng.normals(key, idx, steps)
        out = np.empty((idx.size, n + 1))
        out[:, 0] = params.s0
        out[:, 1:] = params.s0 * np.exp(np.cumsum(drift + vol * z, axis=1))
        return out

    return PathBatch(_rows(batch, block, threads), dt, (seed, "gbm"))


def fbm_covariance(ti, tj, h: float):
    """Covariance of fractional Brownian motion with Hurst exponent ``h``."""
    if not 0 < h < 1:
        raise ValueError(f"hurst must lie strictly inside (0, 1), got {h!r}")
    ti = np.asarray(ti, dtype=np.float64)
    tj = np.asarray(tj, dtype=np.float64)
    if np.any(ti < 0) or np.any(tj < 0):
        raise ValueError("fBm covariance needs non-negative times")
    two_h = 2.0 * h
    out = 0.5 * (ti**two_h + tj**two_h - np.abs(ti - tj) ** two_h)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FbmFactor:
    """Lower Cholesky factor of the fBm covariance on the unit grid ``1..N``.

    fBm is self-similar, so a grid with spacing ``dt`` reuses this factor
    scaled by ``dt ** h``.
    """

    steps: int
    hurst: float
    factor: np.ndarray

    def covariance(self) -> np.ndarray:
        t = np.arange(1, self.steps + 1, dtype=np.float64)
        return fbm_covariance(t[:, None], t[None, :], self.hurst)


@functools.lru_cache(maxsize=32)
def fbm_factor(steps: int, hurst: float) -> FbmFactor:
    t = np.arange(1, steps + 1, dtype=np.float64)
    cov = fbm_covariance(t[:, None], t[None, :], hurst)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"fBm covariance on a {steps}-point grid (h={hurst}) is not positive definite: {exc}") from None
    chol.setflags(write=False)
    return FbmFactor(steps, hurst, chol)


def gen_fbm(params: MarketParams, h: float, batch: int, seed: int, threads: int = 1) -> PathBatch:
    """Prices ``s0 * exp(sigma * B_H(t))`` from exact (Cholesky) fBm samples."""
    if not 0 < h < 1:
        raise ValueError(f"hurst must lie strictly inside (0, 1), got {h!r}")
    n, dt = params.steps, params.dt
    chol = fbm_factor(n, float(h)).factor
    scale = dt**h
    key = rng.derive_seed(seed, "fbm", h)
    steps = np.arange(n)

    def block(idx):
        z = rng.normals(key, idx, steps)
        b = np.zeros((idx.size, n))
        # column-wise accumulation keeps each path's sum order independent of the batch
        for j in range(n):
            b[:, j:] += z[:, j : j + 1] * chol[j:, j]
        out = np.empty((idx.size, n + 1))
        out[:, 0] = params.s0
        out[:, 1:] = params.s0 * np.exp(params.sigma * scale * b)
        return out

    return PathBatch(_rows(batch, block, threads), dt, (seed, f"fbm(h={h})"))


def gen_harmonic(params: MarketParams, spec: GeneratorSpec, batch: int, seed: int, threads: int = 1) -> PathBatch:
    """Two sine harmonics around s0 plus additive Gaussian noise.

    ``S_t = s0 * (1 + a[sin(w1 t + p1) - sin p1] + a[sin(w2 t + p2) - sin p2]) + eps_t``
    with ``eps_t ~ N(0, (noise_std * s0)^2)`` for ``t >= 1``. The phase offsets
    are subtracted so every path starts exactly at s0. Phases are uniform on
    ``[0, 2 pi)`` per path when ``random_phase`` is set, else zero. Prices are
    clamped below at ``1e-6 * s0``.
    """
    n, dt = params.steps, params.dt
    t = np.arange(n + 1) * dt
    key_phase = rng.derive_seed(seed, "harmonic-phase")
    key_noise = rng.derive_seed(seed, "harmonic-noise")
    w1, w2 = 2 * np.pi * spec.freq1, 2 * np.pi * spec.freq2
    a, s0 = spec.ampl, params.s0
    floor = 1e-6 * s0

    def block(idx):
        if spec.random_phase:
            ph = 2 * np.pi * rng.uniforms(key_phase, idx, [0, 1])
        else:
            ph = np.zeros((idx.size, 2))
        p1, p2 = ph[:, :1], ph[:, 1:]
        level = 1 + a * (np.sin(w1 * t + p1) - np.sin(p1)) + a * (np.sin(w2 * t + p2) - np.sin(p2))
        out = s0 * level
        if spec.noise_std > 0:
            out[:, 1:] += spec.noise_std * s0 * rng.normals(key_noise, idx, np.arange(n))
        out[:, 0] = s0
        return np.maximum(out, floor)

    return PathBatch(_rows(batch, block, threads), dt, (seed, "harmonic"))


def gen_bootstrap(source: ReturnSeries, params: MarketParams, batch: int, seed: int, threads: int = 1) -> PathBatch:
    """Compound contiguous windows of historical returns from s0.

    Each path draws a start ``i`` uniformly from ``0..len(source) - N`` and
    uses returns ``source[i], ..., source[i + N - 1]`` in order.
    """
    n = params.steps
    length = len(source)
    if length < n:
        raise DataError(f"bootstrap needs at least {n} returns for N={n} steps, source "
                        f"{source.label or '<unnamed>'} has {length}")
    n_windows = length - n + 1
    key = rng.derive_seed(seed, "bootstrap")
    returns = source.returns
    offsets = np.arange(n)

    def block(idx):
        u = rng.uniforms(key, idx, [0])[:, 0]
        start = np.minimum((u * n_windows).astype(np.int64), n_windows - 1)
        out = np.empty((idx.size, n + 2))
        out[:, 0] = start
        out[:, 1] = params.s0
        out[:, 2:] = returns[start[:, None] + offsets]
        out[:, 1:] = np.cumprod(out[:, 1:], axis=1)
        return out

    raw = _rows(batch, block, threads)
    return PathBatch(raw[:, 1:], params.dt, (seed, f"bootstrap({source.label})"), starts=raw[:, 0].astype(np.int64))


def generate(spec: GeneratorSpec, params: MarketParams, batch: int, seed: int, threads: int = 1) -> PathBatch:
    """Dispatch to the generator named by ``spec.kind``."""
    if spec.kind == "gbm":
        return gen_gbm(params, batch, seed, threads)
    if spec.kind == "fbm":
        return gen_fbm(params, spec.hurst, batch, seed, threads)
    if spec.kind == "harmonic":
        return gen_harmonic(params, spec, batch, seed, threads)
    return gen_bootstrap(spec.source, params, batch, seed, threads)
