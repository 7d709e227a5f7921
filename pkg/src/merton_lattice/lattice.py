"""Multinomial step structure: xi-vectors, jump grid and per-step branch set."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    InconsistentCounts,
    ModelError,
    NegativeDiffusionFactor,
    TailNotResolvable,
)
from .model import DiscreteLaw, JumpLaw, MertonModel, SamplerLaw

TAIL_SAMPLES = 100_000
LEVEL_CAP_CONST = 8.0


# ---------------------------------------------------------------------------
# xi vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class XiTable:
    """The d+1 equiprobable diffusion outcomes ``rows[w]`` in R^d.

    ``matrix`` is the orthogonal (d+1)x(d+1) matrix the rows were cut from.
    """

    d: int
    rows: np.ndarray
    matrix: np.ndarray
    method: str = "householder"

    @property
    def prob(self) -> float:
        return 1.0 / (self.d + 1)

    def moment_errors(self) -> dict:
        """Max absolute deviations from mean 0, covariance I and squared norm d."""
        rows = self.rows
        mean = rows.sum(axis=0)
        cov = rows.T @ rows / (self.d + 1)
        return {
            "mean": float(np.max(np.abs(mean))),
            "cov": float(np.max(np.abs(cov - np.eye(self.d)))),
            "norm": float(np.max(np.abs((rows**2).sum(axis=1) - self.d))),
        }


def build_xi(d: int) -> XiTable:
    """Xi-vectors from the Householder reflection taking e_{d+1} to the uniform unit vector."""
    if d < 1:
        raise ValueError("d must be >= 1")
    m = d + 1
    u = np.full(m, 1.0 / math.sqrt(m))
    v = -u
    v[-1] += 1.0
    A = np.eye(m) - 2.0 * np.outer(v, v) / (v @ v)
    rows = math.sqrt(m) * A[:, :d]
    rows.setflags(write=False)
    A.setflags(write=False)
    return XiTable(d=d, rows=rows, matrix=A)


# ---------------------------------------------------------------------------
# jump grid
# ---------------------------------------------------------------------------


def grid_spacing(n: int) -> float:
    """``n**(-1/8)``; grid points sit at half this spacing."""
    return float(n) ** -0.125


def grid_value(k, n: int):
    """Grid point ``(k/2) n^{-1/8} - 1``."""
    return (np.asarray(k) / 2.0) * grid_spacing(n) - 1.0


def grid_cell(u, n: int) -> np.ndarray:
    """Index ``k >= 1`` of the cell ``(g_{k-1}, g_k]`` containing each ``u > -1``."""
    u = np.asarray(u, dtype=float)
    h = grid_spacing(n)
    k = np.maximum(np.ceil((u + 1.0) * 2.0 / h), 1.0).astype(np.int64)
    # guard against rounding at cell boundaries
    k = np.where(grid_value(k, n) < u, k + 1, k)
    k = np.where((k > 1) & (grid_value(k - 1, n) >= u), k - 1, k)
    return k


def grid_point(u, n: int) -> np.ndarray:
    """Right endpoint of the containing grid cell, without truncation."""
    return grid_value(grid_cell(u, n), n)


def discretize_values(u, n: int, levels: int) -> np.ndarray:
    """Map jump sizes onto the grid; values above the top level ``levels`` map to 0."""
    u = np.asarray(u, dtype=float)
    k = grid_cell(u, n)
    return np.where(k <= levels, grid_value(k, n), 0.0)


def _tail_sum(samples: np.ndarray, weights: Optional[np.ndarray], g: float) -> float:
    # sum over coordinates of E[U_j 1{U_j > g}]
    masked = np.where(samples > g, samples, 0.0)
    if weights is None:
        return float(masked.mean(axis=0).sum())
    return math.fsum((weights @ masked).tolist())


def truncation_level(
    law: JumpLaw,
    n: int,
    tail_samples: int = TAIL_SAMPLES,
    cap_const: float = LEVEL_CAP_CONST,
) -> int:
    """Smallest admissible truncation level ``M(n)``.

    The scan starts at the first level whose grid point is nonnegative, so the
    tail expectation only contains positive jump sizes, and stops at
    ``ceil(cap_const * n**(1/4))``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    h = grid_spacing(n)
    if isinstance(law, DiscreteLaw):
        samples, weights = law.values, law.probs
    else:
        samples, weights = law.reference_sample(tail_samples), None
    start = max(1, math.ceil(2.0 / h))
    while start > 1 and grid_value(start - 1, n) >= 0:
        start -= 1
    while grid_value(start, n) < 0:
        start += 1
    cap = max(start, math.ceil(cap_const * n**0.25))
    for M in range(start, cap + 1):
        if _tail_sum(samples, weights, float(grid_value(M, n))) < h / 2.0:
            return M
    raise TailNotResolvable(
        f"jump tail above grid level {cap} still carries mass >= n^(-1/8)/2 for n={n}"
    )


def _merge_rows(values: np.ndarray, probs: np.ndarray):
    uniq, inverse = np.unique(values, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    merged = np.array(
        [math.fsum(probs[inverse == j].tolist()) for j in range(uniq.shape[0])]
    )
    return uniq, merged


def discretize_jumps(
    law: JumpLaw,
    n: int,
    tail_samples: int = TAIL_SAMPLES,
    mode: str = "discretized",
    levels: Optional[int] = None,
) -> DiscreteLaw:
    """Finite jump law used by the n-step lattice.

    ``mode="native"`` returns a finite-support law unchanged (its number of growth
    rates then does not depend on ``n``).  Otherwise every coordinate is moved to
    the right end of its grid cell and values above the truncation level map to 0.
    ``levels`` overrides the minimal truncation level.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode == "native":
        if not isinstance(law, DiscreteLaw):
            raise ModelError("native jump mode needs a finite-support (discrete) jump law")
        return law
    if mode != "discretized":
        raise ValueError(f"unknown jump mode {mode!r}")
    M = truncation_level(law, n, tail_samples) if levels is None else int(levels)
    if isinstance(law, DiscreteLaw):
        values, probs = law.values, law.probs
    else:
        values = law.reference_sample(tail_samples)
        probs = np.full(values.shape[0], 1.0 / values.shape[0])
    mapped = discretize_values(values, n, M)
    uniq, merged = _merge_rows(mapped, probs)
    return DiscreteLaw(uniq, merged, origin="discretized", n=n, levels=M)


def prepare_jumps(model: MertonModel, n: int, mode: Optional[str] = None, **kw) -> DiscreteLaw:
    """Jump law for the n-step lattice: native when the model law is finite, else discretized."""
    if mode is None:
        mode = "native" if isinstance(model.jumps, DiscreteLaw) else "discretized"
    return discretize_jumps(model.jumps, n, mode=mode, **kw)


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    omega: int
    jump: int
    prob: float
    factor: np.ndarray


@dataclass(frozen=True)
class LatticeSpec:
    """One-step structure of the n-step multinomial market.

    A branch is a pair (diffusion outcome ``w``, jump outcome ``m``); outcome
    ``m = 0`` is "no jump".  The per-coordinate step factor factorises as
    ``diff_factors[w] * jump_factors[m]``, where the diffusion part already
    carries the growth ``exp(r T/n)`` and the martingale correction ``1/denom``.
    """

    n: int
    dt: float
    rate: float
    jump_prob: float
    xi: XiTable
    jumps: DiscreteLaw
    denom: np.ndarray
    diffusion: np.ndarray
    diff_factors: np.ndarray
    diff_probs: np.ndarray
    jump_factors: np.ndarray
    jump_probs: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return self.xi.d

    @property
    def n_diff(self) -> int:
        return self.diff_factors.shape[0]

    @property
    def n_jump(self) -> int:
        return self.jump_factors.shape[0]

    @property
    def growth(self) -> float:
        return math.exp(self.rate * self.dt)

    @property
    def branches(self) -> list[Branch]:
        out = []
        for w in range(self.n_diff):
            for m in range(self.n_jump):
                out.append(
                    Branch(
                        omega=w,
                        jump=m,
                        prob=float(self.diff_probs[w] * self.jump_probs[m]),
                        factor=self.diff_factors[w] * self.jump_factors[m],
                    )
                )
        return out

    def martingale_residual(self) -> float:
        """Max over coordinates of ``|sum_b p_b f_b / exp(r T/n) - 1|``."""
        bs = self.branches
        probs = np.array([b.prob for b in bs])
        factors = np.array([b.factor for b in bs])
        mean = np.array([math.fsum((probs * factors[:, i]).tolist()) for i in range(self.d)])
        return float(np.max(np.abs(mean / self.growth - 1.0)))

    def probability_residual(self) -> float:
        return abs(math.fsum(b.prob for b in self.branches) - 1.0)


def build_lattice(model: MertonModel, jumps: Optional[DiscreteLaw], n: int, xi: Optional[XiTable] = None) -> LatticeSpec:
    """Per-step branch set of the n-step market for ``model``.

    Raises :class:`NegativeDiffusionFactor` if some ``1 + sqrt(T/n) sigma xi`` is
    negative; a larger ``n`` fixes this.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = model.d
    xi = build_xi(d) if xi is None else xi
    if jumps is None:
        jumps = prepare_jumps(model, n)
    if jumps.dim != d:
        raise ModelError(f"jump law dimension {jumps.dim} != model dimension {d}")
    T = model.horizon
    dt = T / n
    diffusion = 1.0 + math.sqrt(dt) * (xi.rows @ model.vol.T)
    if np.any(diffusion < 0):
        raise NegativeDiffusionFactor(
            f"diffusion factor {diffusion.min():.6g} < 0 at n={n}; increase n"
        )
    p = -math.expm1(-model.intensity * T / n)
    if p > 0:
        jump_mean = jumps.mean()
        jump_factors = np.vstack([np.ones(d), 1.0 + jumps.values])
        jump_probs = np.concatenate([[1.0 - p], p * jumps.probs])
    else:
        jump_mean = np.zeros(d)
        jump_factors = np.ones((1, d))
        jump_probs = np.ones(1)
    denom = 1.0 + p * jump_mean
    growth = math.exp(model.rate * dt)
    diff_factors = growth * diffusion / denom
    diff_probs = np.full(d + 1, 1.0 / (d + 1))
    for a in (denom, diffusion, diff_factors, diff_probs, jump_factors, jump_probs):
        a.setflags(write=False)
    return LatticeSpec(
        n=n,
        dt=dt,
        rate=model.rate,
        jump_prob=p,
        xi=xi,
        jumps=jumps,
        denom=denom,
        diffusion=diffusion,
        diff_factors=diff_factors,
        diff_probs=diff_probs,
        jump_factors=jump_factors,
        jump_probs=jump_probs,
        meta={"xi_method": xi.method, "jump_origin": jumps.origin, "levels": jumps.levels},
    )


# ---------------------------------------------------------------------------
# recombining states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateKey:
    """Recombining node: step ``k`` and how often each branch type was taken."""

    step: int
    diff_counts: tuple
    jump_counts: tuple

    def validate(self, spec: LatticeSpec) -> None:
        dc, jc = self.diff_counts, self.jump_counts
        if len(dc) != spec.n_diff or len(jc) != spec.n_jump:
            raise InconsistentCounts(
                f"expected {spec.n_diff} diffusion and {spec.n_jump} jump counts, "
                f"got {len(dc)} and {len(jc)}"
            )
        if min(dc) < 0 or min(jc) < 0:
            raise InconsistentCounts("counts must be nonnegative")
        if sum(dc) != self.step or sum(jc) != self.step:
            raise InconsistentCounts(
                f"counts sum to {sum(dc)}/{sum(jc)} but step is {self.step}"
            )
        if not 0 <= self.step <= spec.n:
            raise InconsistentCounts(f"step {self.step} outside 0..{spec.n}")


def count_products(factors: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """``prod_j factors[j] ** counts[:, j]`` per row, multiplied in slot order."""
    counts = np.atleast_2d(counts)
    out = np.ones((counts.shape[0], factors.shape[1]))
    for j in range(factors.shape[0]):
        out *= factors[j][None, :] ** counts[:, j : j + 1]
    return out


def state_price(spot, key: StateKey, spec: LatticeSpec) -> np.ndarray:
    """Asset prices at a recombining node."""
    key.validate(spec)
    spot = np.asarray(spot, dtype=float)
    dpart = count_products(spec.diff_factors, np.array([key.diff_counts]))[0]
    jpart = count_products(spec.jump_factors, np.array([key.jump_counts]))[0]
    return spot * dpart * jpart
