"""Convergence studies of lattice prices over a ladder of step counts."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateFit, InsufficientLadder, ModelError
from .lattice import prepare_jumps
from .model import DiscreteLaw, MertonModel, Payoff
from .montecarlo import MCConfig, MCEstimate, black_scholes, lsmc_american, mc_european, poisson_mixture_european
from .pricer import DEFAULT_STATE_BUDGET, price_american, price_european

ZERO_ERROR = 1e-14
BOUND_RATE = 0.125
REFERENCE_MODES = ("closed_form", "mc", "richardson")


@dataclass(frozen=True)
class RateFit:
    C: float
    beta: float
    residual: float
    points: int


def fit_rate(pairs: Sequence[tuple]) -> RateFit:
    """Fit ``e_n = C n^(-beta)`` by ordinary least squares on log-log data.

    Points with ``e_n <= 1e-14`` are dropped.  ``residual`` is the residual
    standard error of the log fit (0 when only two points remain).
    """
    pts = [(float(n), float(e)) for n, e in pairs if e > ZERO_ERROR]
    if len(pts) < 2:
        raise DegenerateFit(f"only {len(pts)} errors above {ZERO_ERROR}; values agree exactly")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0:
        raise DegenerateFit("all points share the same n")
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    dof = len(pts) - 2
    rse = math.sqrt(float((resid**2).sum()) / dof) if dof > 0 else 0.0
    return RateFit(C=math.exp(intercept), beta=-slope, residual=rse, points=len(pts))


def richardson(v_a: float, v_b: float, p: float = 1.0, ratio: float = 2.0) -> float:
    """Extrapolate from ``v_a`` at n and ``v_b`` at ``ratio * n`` assuming error ~ n^-p."""
    if p <= 0:
        raise ValueError("order p must be positive")
    w = ratio**p
    return (w * v_b - v_a) / (w - 1.0)


@dataclass
class LadderRow:
    n: int
    value: float
    seconds: float
    error: float = float("nan")


@dataclass
class ConvergenceReport:
    style: str
    rows: list
    reference: float
    ref_kind: str
    ref_stderr: Optional[float] = None
    fit: Optional[RateFit] = None
    note: str = ""
    lsmc: Optional[MCEstimate] = None
    meta: dict = field(default_factory=dict)

    @property
    def ns(self) -> list:
        return [r.n for r in self.rows]

    @property
    def errors(self) -> list:
        return [r.error for r in self.rows]

    @property
    def inversions(self) -> int:
        e = self.errors
        return sum(1 for a, b in zip(e, e[1:]) if b > a)

    @property
    def max_scaled_error(self) -> float:
        """``max_n e_n n^(1/8)``: the smallest constant making the ladder fit the rate bound shape."""
        return max(r.error * r.n**BOUND_RATE for r in self.rows)

    @property
    def bound_shape_consistent(self) -> bool:
        # exact agreement trivially satisfies the bound shape
        if self.fit is None:
            return math.isfinite(self.max_scaled_error)
        return math.isfinite(self.max_scaled_error) and self.fit.beta >= BOUND_RATE

    def lsmc_agrees(self, lattice_tol: float = 0.0) -> Optional[bool]:
        """Richardson reference inside the LSMC 99% interval widened by ``lattice_tol``."""
        if self.lsmc is None:
            return None
        return self.lsmc.contains(self.reference, lattice_tol)


def _closed_form(model: MertonModel, payoff: Payoff, style: str) -> float:
    if payoff.family == "Constant":
        if style == "american":
            return payoff.strike
        return math.exp(-model.rate * model.horizon) * payoff.strike
    if style != "european":
        raise ModelError("closed-form references exist only for European payoffs")
    if model.d != 1 or payoff.family not in ("BasketCall", "BasketPut"):
        raise ModelError("closed-form references need d=1 and a basket call or put")
    kind = "call" if payoff.family == "BasketCall" else "put"
    w = payoff.weights[0]
    S0 = w * float(model.spot[0])
    sigma = abs(float(model.vol[0, 0]))
    r, T = model.rate, model.horizon
    if model.intensity == 0:
        return black_scholes(kind, S0, payoff.strike, sigma, r, T)
    law = model.jumps
    if not isinstance(law, DiscreteLaw) or law.size != 1:
        raise ModelError("closed-form references need a single deterministic jump size")
    return poisson_mixture_european(kind, S0, payoff.strike, sigma, r, T, model.intensity, float(law.values[0, 0]))


def run_study(
    model: MertonModel,
    payoff: Payoff,
    n_list: Sequence[int],
    style: str = "american",
    reference: str = "richardson",
    mc_cfg: Optional[MCConfig] = None,
    jump_mode: Optional[str] = None,
    state_budget: int = DEFAULT_STATE_BUDGET,
    threads: int = 1,
    order: float = 1.0,
) -> ConvergenceReport:
    """Price every ``n`` in the ladder and compare against a reference value.

    ``reference`` is ``"closed_form"``, ``"mc"`` (European Monte Carlo or LSMC)
    or ``"richardson"`` (extrapolation of the two largest ``n`` with order
    ``order``; LSMC is attached as a sanity band when ``mc_cfg`` is given).
    """
    ns = [int(n) for n in n_list]
    if len(ns) < 3:
        raise InsufficientLadder("need at least 3 step counts")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise InsufficientLadder("step counts must be strictly increasing")
    if style not in ("american", "european"):
        raise ValueError(f"unknown style {style!r}")
    if reference not in REFERENCE_MODES:
        raise ValueError(f"unknown reference mode {reference!r}")
    pricer = price_american if style == "american" else price_european

    def one(n):
        t0 = time.perf_counter()
        jumps = prepare_jumps(model, n, jump_mode)
        res = pricer(model, payoff, n, jumps, state_budget=state_budget)
        return LadderRow(n=n, value=res.value, seconds=time.perf_counter() - t0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, ns))
    else:
        rows = [one(n) for n in ns]

    ref_stderr = None
    lsmc = None
    if reference == "closed_form":
        ref = _closed_form(model, payoff, style)
    elif reference == "mc":
        cfg = mc_cfg or MCConfig()
        est = mc_european(model, payoff, cfg, threads) if style == "european" else lsmc_american(model, payoff, cfg, threads)
        ref, ref_stderr = est.mean, est.stderr
    else:
        a, b = rows[-2], rows[-1]
        ref = richardson(a.value, b.value, order, b.n / a.n)
        if mc_cfg is not None and style == "american":
            lsmc = lsmc_american(model, payoff, mc_cfg, threads)

    for row in rows:
        row.error = abs(row.value - ref)
    note = ""
    try:
        fit = fit_rate([(r.n, r.error) for r in rows])
    except DegenerateFit as exc:
        fit, note = None, f"not a fit: {exc}"
    return ConvergenceReport(
        style=style,
        rows=rows,
        reference=ref,
        ref_kind=reference,
        ref_stderr=ref_stderr,
        fit=fit,
        note=note,
        lsmc=lsmc,
        meta={"order": order, "jump_mode": jump_mode},
    )
