"""Monte Carlo and closed-form reference prices for the continuous Merton model.

Random numbers come from Philox (a counter-based generator).  Paths are cut into
fixed-size blocks and block ``b`` of stream ``s`` draws from the substream keyed by
``(seed, s, b)``, so results do not depend on how many threads run the blocks.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import poisson

from .model import MertonModel, Payoff, payoff_eval

BLOCK = 1 << 16
Z_99 = 2.576
RIDGE = 1e-8


@dataclass(frozen=True)
class MCConfig:
    paths: int = 100_000
    steps: int = 50
    seed: int = 0
    basis_degree: int = 2

    def __post_init__(self):
        if self.paths < 100:
            raise ValueError("paths must be >= 100")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.basis_degree < 0:
            raise ValueError("basis_degree must be >= 0")


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    paths: int
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def half_width(self) -> float:
        """Half-width of the 99% confidence interval."""
        return Z_99 * self.stderr

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return abs(value - self.mean) <= self.half_width + slack


def _rng(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def _blocks(count: int):
    return [(b, min(BLOCK, count - b * BLOCK)) for b in range((count + BLOCK - 1) // BLOCK)]


def _run_blocks(fn, count: int, threads: int):
    blocks = _blocks(count)
    if threads <= 1 or len(blocks) == 1:
        return [fn(b, c) for b, c in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda bc: fn(*bc), blocks))


def _poisson_inverse(u: np.ndarray, mean: float) -> np.ndarray:
    # inversion against a CDF table long enough that the tail is below double precision
    if mean == 0:
        return np.zeros(u.shape, dtype=np.int64)
    kmax = int(mean + 40.0 * math.sqrt(mean) + 40)
    cdf = poisson.cdf(np.arange(kmax + 1), mean)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


def _simulate_block(model: MertonModel, steps: int, rng: np.random.Generator, count: int) -> np.ndarray:
    d = model.d
    dt = model.horizon / steps
    vol = model.vol
    drift = (model.rate + model.drift - 0.5 * (vol**2).sum(axis=1)) * dt
    z = rng.standard_normal((count, steps, d))
    logs = drift + math.sqrt(dt) * (z @ vol.T)
    if model.intensity > 0:
        jumps_n = _poisson_inverse(rng.random((count, steps)), model.intensity * dt)
        total = int(jumps_n.sum())
        if total:
            sizes = model.jumps.draw(rng, total)
            owner = np.repeat(np.arange(count * steps), jumps_n.ravel())
            jl = np.zeros((count * steps, d))
            for i in range(d):
                jl[:, i] = np.bincount(owner, weights=np.log1p(sizes[:, i]), minlength=count * steps)
            logs += jl.reshape(count, steps, d)
    paths = np.empty((count, steps + 1, d))
    paths[:, 0, :] = model.spot
    paths[:, 1:, :] = model.spot * np.exp(np.cumsum(logs, axis=1))
    return paths


def simulate_grid_paths(model: MertonModel, steps: int, seed: int, count: int, threads: int = 1, stream: int = 0) -> np.ndarray:
    """Exact paths of S on the grid ``0, T/steps, ..., T``; shape ``(count, steps + 1, d)``."""
    parts = _run_blocks(
        lambda b, c: _simulate_block(model, steps, _rng(seed, stream, b), c), count, threads
    )
    return np.concatenate(parts, axis=0)


def simulate_terminal(model: MertonModel, seed: int, count: int, threads: int = 1) -> np.ndarray:
    """Samples of S(T), shape ``(count, d)``."""
    return simulate_grid_paths(model, 1, seed, count, threads)[:, -1, :]


def _summarize(values: np.ndarray, seed: int, **extra) -> MCEstimate:
    n = values.size
    first = values.flat[0]
    if np.all(values == first):
        return MCEstimate(float(first), 0.0, n, seed, extra)
    mean = math.fsum(values.tolist()) / n
    var = math.fsum(((values - mean) ** 2).tolist()) / (n - 1)
    return MCEstimate(mean, math.sqrt(var / n), n, seed, extra)


def mc_european(model: MertonModel, payoff: Payoff, cfg: MCConfig, threads: int = 1) -> MCEstimate:
    """Discounted terminal payoff averaged over ``cfg.paths`` exact draws of S(T)."""
    disc = math.exp(-model.rate * model.horizon)

    def block(b, c):
        s = _simulate_block(model, 1, _rng(cfg.seed, 0, b), c)[:, -1, :]
        return disc * np.atleast_1d(payoff_eval(payoff, s, model.horizon))

    values = np.concatenate(_run_blocks(block, cfg.paths, threads))
    return _summarize(values, cfg.seed)


# ---------------------------------------------------------------------------
# least-squares Monte Carlo
# ---------------------------------------------------------------------------


def _basis(x: np.ndarray, degree: int) -> np.ndarray:
    n, d = x.shape
    cols = [np.ones(n)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            cols.append(np.prod(x[:, combo], axis=1))
    return np.column_stack(cols)


def _regress(X: np.ndarray, y: np.ndarray):
    """Least-squares coefficients; falls back to ridge when X has deficient rank."""
    gram = X.T @ X
    rhs = X.T @ y
    if np.linalg.matrix_rank(X) < X.shape[1]:
        return np.linalg.solve(gram + RIDGE * np.eye(X.shape[1]), rhs), True
    try:
        return np.linalg.solve(gram, rhs), False
    except np.linalg.LinAlgError:
        return np.linalg.solve(gram + RIDGE * np.eye(X.shape[1]), rhs), True


def lsmc_american(model: MertonModel, payoff: Payoff, cfg: MCConfig, threads: int = 1) -> MCEstimate:
    """Longstaff-Schwartz lower bound on the American price.

    Continuation values are regressed on all monomials of the normalised prices
    up to ``cfg.basis_degree`` using in-the-money training paths.  The fitted
    exercise rule is then applied to an independent set of paths, so the
    returned mean is biased low.
    """
    if cfg.steps < 2:
        raise ValueError("lsmc needs at least 2 exercise dates")
    steps, r, T = cfg.steps, model.rate, model.horizon
    dt = T / steps
    disc = np.exp(-r * dt * np.arange(steps + 1))
    scale = model.spot

    def immediate(paths, k):
        return disc[k] * np.atleast_1d(payoff_eval(payoff, paths[:, k, :], k * dt))

    train = simulate_grid_paths(model, steps, cfg.seed, cfg.paths, threads, stream=0)
    cash = immediate(train, steps)
    coefs: list = [None] * (steps + 1)
    ridge_used = 0
    for k in range(steps - 1, 0, -1):
        imm = immediate(train, k)
        itm = imm > 0
        X = _basis(train[itm, k, :] / scale, cfg.basis_degree)
        if itm.sum() <= X.shape[1]:
            continue
        beta, ridged = _regress(X, cash[itm])
        ridge_used += ridged
        coefs[k] = beta
        stop = imm[itm] >= X @ beta
        idx = np.flatnonzero(itm)[stop]
        cash[idx] = imm[idx]
    f0 = float(payoff_eval(payoff, model.spot, 0.0))
    in_sample = math.fsum(cash.tolist()) / cash.size
    extra = {"ridge_fallbacks": ridge_used, "in_sample": in_sample, "stop_at_zero": f0 >= in_sample}
    if f0 >= in_sample:
        return MCEstimate(f0, 0.0, cfg.paths, cfg.seed, extra)

    test = simulate_grid_paths(model, steps, cfg.seed, cfg.paths, threads, stream=1)
    value = immediate(test, steps)
    alive = np.ones(test.shape[0], dtype=bool)
    for k in range(1, steps):
        if coefs[k] is None:
            continue
        imm = immediate(test, k)
        cand = alive & (imm > 0)
        if not np.any(cand):
            continue
        X = _basis(test[cand, k, :] / scale, cfg.basis_degree)
        stop = imm[cand] >= X @ coefs[k]
        idx = np.flatnonzero(cand)[stop]
        value[idx] = imm[idx]
        alive[idx] = False
    return _summarize(value, cfg.seed, **extra)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def black_scholes(kind: str, S0: float, K: float, sigma: float, r: float, T: float) -> float:
    """Black-Scholes price of a European call or put."""
    if kind not in ("call", "put"):
        raise ValueError("kind must be 'call' or 'put'")
    df = math.exp(-r * T)
    if K <= 0:
        return S0 if kind == "call" else 0.0
    sd = sigma * math.sqrt(T)
    d1 = (math.log(S0 / K) + (r + 0.5 * sigma * sigma) * T) / sd
    d2 = d1 - sd
    if kind == "call":
        return float(S0 * ndtr(d1) - K * df * ndtr(d2))
    return float(K * df * ndtr(-d2) - S0 * ndtr(-d1))


def poisson_mixture_european(
    kind: str, S0: float, K: float, sigma: float, r: float, T: float, lam: float, u: float
) -> float:
    """European price with a single deterministic relative jump size ``u``.

    Conditioning on the number of jumps gives a Poisson mixture of
    Black-Scholes prices; terms are added until the remaining Poisson mass is
    below 1e-12.
    """
    if u <= -1:
        raise ValueError("jump size must exceed -1")
    if lam == 0 or u == 0:
        return black_scholes(kind, S0, K, sigma, r, T)
    mean = lam * T
    total = 0.0
    k = 0
    while True:
        w = poisson.pmf(k, mean)
        total += w * black_scholes(kind, S0 * (1 + u) ** k * math.exp(-lam * u * T), K, sigma, r, T)
        if poisson.sf(k, mean) < 1e-12:
            return float(total)
        k += 1
