"""Backward induction on the recombining multinomial lattice.

A layer at step ``k`` is a dense 2-D array indexed by (rank of diffusion counts,
rank of jump counts).  Because a branch probability is the product of a diffusion
probability and a jump probability, the one-step expectation is done as two
axis-wise averages: first over jump outcomes, then over diffusion outcomes.
Layer values are stored already discounted to time 0.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import compositions as comp
from .errors import StateBudgetExceeded, TooLarge
from .lattice import LatticeSpec, StateKey, build_lattice, count_products, prepare_jumps
from .model import DiscreteLaw, MertonModel, Payoff, payoff_eval

DEFAULT_STATE_BUDGET = 50_000_000

__all__ = [
    "DEFAULT_STATE_BUDGET",
    "PricingResult",
    "StateKey",
    "enumerate_stopping_oracle",
    "layer_sizes",
    "price_american",
    "price_european",
    "price_stopping_rule",
]


@dataclass
class PricingResult:
    value: float
    n: int
    style: str
    states_per_step: list
    root_exercise: Optional[bool]
    exercise_fraction: Optional[list]
    seconds: float
    meta: dict = field(default_factory=dict)

    @property
    def max_states(self) -> int:
        return max(self.states_per_step)

    @property
    def total_states(self) -> int:
        return sum(self.states_per_step)


def layer_sizes(spec: LatticeSpec) -> list[int]:
    """Number of recombining states at each step 0..n."""
    return [
        comp.count(k, spec.n_diff) * comp.count(k, spec.n_jump) for k in range(spec.n + 1)
    ]


def _compensated_sum(terms):
    # Neumaier summation in a fixed term order
    s = None
    c = None
    for t in terms:
        if s is None:
            s = np.array(t, dtype=float, copy=True)
            c = np.zeros_like(s)
            continue
        tmp = s + t
        c += np.where(np.abs(s) >= np.abs(t), (s - tmp) + t, (t - tmp) + s)
        s = tmp
    return s + c


def _continuation(nxt: np.ndarray, k: int, spec: LatticeSpec) -> np.ndarray:
    """Expected discounted value at step ``k`` from layer ``k+1``."""
    jchild = comp.child_index(k, spec.n_jump)
    dchild = comp.child_index(k, spec.n_diff)
    jp, dp = spec.jump_probs, spec.diff_probs
    over_jumps = _compensated_sum(jp[m] * nxt[:, jchild[m]] for m in range(spec.n_jump))
    return _compensated_sum(dp[w] * over_jumps[dchild[w], :] for w in range(spec.n_diff))


def _layer_payoff(model: MertonModel, payoff: Payoff, spec: LatticeSpec, k: int) -> np.ndarray:
    dcounts = comp.compositions(k, spec.n_diff)
    jcounts = comp.compositions(k, spec.n_jump)
    dpart = model.spot * count_products(spec.diff_factors, dcounts)
    jpart = count_products(spec.jump_factors, jcounts)
    prices = dpart[:, None, :] * jpart[None, :, :]
    values = np.asarray(payoff_eval(payoff, prices, k * spec.dt)).reshape(dcounts.shape[0], jcounts.shape[0])
    return math.exp(-model.rate * k * spec.dt) * values


def _setup(model, payoff, n, jumps, state_budget, xi=None):
    if payoff.d != model.d:
        raise ValueError(f"payoff has dimension {payoff.d}, model has {model.d}")
    if jumps is None:
        jumps = prepare_jumps(model, n)
    spec = build_lattice(model, jumps, n, xi=xi)
    sizes = layer_sizes(spec)
    if max(sizes) > state_budget:
        raise StateBudgetExceeded(
            f"widest layer has {max(sizes)} states, budget is {state_budget}"
        )
    return spec, sizes


def _backward(model, payoff, spec, combine):
    n = spec.n
    layer = _layer_payoff(model, payoff, spec, n)
    fractions = []
    root_flag = None
    for k in range(n - 1, -1, -1):
        cont = _continuation(layer, k, spec)
        immediate = _layer_payoff(model, payoff, spec, k)
        layer, stop = combine(k, immediate, cont)
        if stop is not None:
            fractions.append(float(np.mean(stop)))
            if k == 0:
                root_flag = bool(stop.ravel()[0])
    fractions.reverse()
    return float(layer.ravel()[0]), fractions, root_flag


def _american(k, immediate, cont):
    stop = immediate >= cont
    return np.where(stop, immediate, cont), stop


def price_american(
    model: MertonModel,
    payoff: Payoff,
    n: int,
    jumps: Optional[DiscreteLaw] = None,
    state_budget: int = DEFAULT_STATE_BUDGET,
    xi=None,
) -> PricingResult:
    """American price of the n-step market by dynamic programming.

    Exercise is chosen whenever the immediate payoff is at least the
    continuation value.  ``jumps`` defaults to the model's own law when it has
    finite support and to its grid discretization otherwise.
    """
    t0 = time.perf_counter()
    spec, sizes = _setup(model, payoff, n, jumps, state_budget, xi)
    value, fractions, root = _backward(model, payoff, spec, _american)
    return PricingResult(
        value=value,
        n=n,
        style="american",
        states_per_step=sizes,
        root_exercise=root,
        exercise_fraction=fractions,
        seconds=time.perf_counter() - t0,
        meta=dict(spec.meta, branches=spec.n_diff * spec.n_jump),
    )


def price_european(
    model: MertonModel,
    payoff: Payoff,
    n: int,
    jumps: Optional[DiscreteLaw] = None,
    state_budget: int = DEFAULT_STATE_BUDGET,
    xi=None,
) -> PricingResult:
    """European price on the same lattice (backward induction without exercise)."""
    t0 = time.perf_counter()
    spec, sizes = _setup(model, payoff, n, jumps, state_budget, xi)
    value, _, _ = _backward(model, payoff, spec, lambda k, imm, cont: (cont, None))
    return PricingResult(
        value=value,
        n=n,
        style="european",
        states_per_step=sizes,
        root_exercise=None,
        exercise_fraction=None,
        seconds=time.perf_counter() - t0,
        meta=dict(spec.meta, branches=spec.n_diff * spec.n_jump),
    )


def price_stopping_rule(
    model: MertonModel,
    payoff: Payoff,
    n: int,
    rule: Callable[[int, np.ndarray, np.ndarray], np.ndarray],
    jumps: Optional[DiscreteLaw] = None,
    state_budget: int = DEFAULT_STATE_BUDGET,
) -> float:
    """Exact lattice value of a given Markovian stopping rule.

    ``rule(k, immediate, continuation)`` returns a boolean stop mask for step
    ``k``; at step n the option is always stopped.  Any rule is worth at most the
    American price.
    """
    spec, _ = _setup(model, payoff, n, jumps, state_budget)

    def combine(k, immediate, cont):
        stop = np.asarray(rule(k, immediate, cont), dtype=bool)
        return np.where(stop, immediate, cont), stop

    value, _, _ = _backward(model, payoff, spec, combine)
    return value


def enumerate_stopping_oracle(
    model: MertonModel,
    payoff: Payoff,
    n: int,
    jumps: Optional[DiscreteLaw] = None,
    xi=None,
) -> float:
    """Snell envelope on the full non-recombining outcome tree (n <= 3 only)."""
    if jumps is None:
        jumps = prepare_jumps(model, n)
    spec = build_lattice(model, jumps, n, xi=xi)
    branches = spec.branches
    if n > 3 or len(branches) > 12:
        raise TooLarge(f"oracle limited to n <= 3 and 12 branches, got n={n}, {len(branches)}")
    r, dt = model.rate, spec.dt

    def snell(k, prices):
        immediate = math.exp(-r * k * dt) * payoff_eval(payoff, prices, k * dt)
        if k == n:
            return immediate
        cont = 0.0
        for b in branches:
            cont += b.prob * snell(k + 1, prices * b.factor)
        return max(immediate, cont)

    return float(snell(0, np.array(model.spot, dtype=float)))


def state_keys(spec: LatticeSpec, k: int):
    """All recombining states at step ``k`` in layer (row-major) order."""
    for dc in comp.compositions(k, spec.n_diff):
        for jc in comp.compositions(k, spec.n_jump):
            yield StateKey(k, tuple(int(x) for x in dc), tuple(int(x) for x in jc))
