"""Embedded invariant checks run by ``merton-lattice selftest``."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import compositions as comp
from .lattice import XiTable, build_lattice, build_xi, discretize_jumps, discretize_values
from .model import DiscreteLaw, Payoff, lipschitz_probe, make_model
from .montecarlo import black_scholes, poisson_mixture_european
from .pricer import enumerate_stopping_oracle, price_american, price_european

TOL = 1e-12


def _models():
    two_point = {"type": "discrete", "values": [[-0.2], [0.3]], "probs": [0.5, 0.5]}
    return [
        make_model([1.0], 0.05, 1.0, [[0.2]]),
        make_model([1.0], 0.05, 1.0, [[0.3]], 1.5, two_point),
        make_model(
            [1.0, 0.9], 0.03, 0.5, [[0.2, 0.0], [0.1, 0.25]], 2.0,
            {"type": "discrete", "values": [[0.1, -0.2], [-0.1, 0.4]], "probs": [0.5, 0.5]},
        ),
    ]


def run_checks(xi_builder: Callable[[int], XiTable] = build_xi) -> list[tuple[str, bool, str]]:
    """Run every check; returns ``(name, passed, detail)`` triples."""
    results = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))

    for d in range(1, 7):
        def xi_moments(d=d):
            err = xi_builder(d).moment_errors()
            return max(err.values()) <= TOL, f"max deviation {max(err.values()):.2e}"
        check(f"xi_moments_d{d}", xi_moments)

    def xi_d1():
        rows = np.sort(xi_builder(1).rows[:, 0])
        return np.allclose(rows, [-1.0, 1.0], atol=TOL, rtol=0), f"rows {rows.tolist()}"
    check("xi_d1_is_pm_one", xi_d1)

    def ranking():
        for k, parts in [(0, 1), (5, 2), (7, 3), (4, 5)]:
            c = comp.compositions(k, parts)
            if c.shape[0] != comp.count(k, parts):
                return False, f"count mismatch at k={k}, parts={parts}"
            if not np.array_equal(comp.rank(c, k), np.arange(c.shape[0])):
                return False, f"rank not a bijection at k={k}, parts={parts}"
        return True, "ranks are dense and ordered"
    check("composition_ranking", ranking)

    def martingale():
        worst = 0.0
        for m in _models():
            for n in (1, 4, 16):
                spec = build_lattice(m, None, n, xi=xi_builder(m.d))
                worst = max(worst, spec.martingale_residual(), spec.probability_residual())
        return worst <= TOL, f"max residual {worst:.2e}"
    check("lattice_martingale_identity", martingale)

    def brute_force():
        worst = 0.0
        payoffs = {1: Payoff("BasketPut", 1.05), 2: Payoff("BasketPut", 2.0, (1.0, 1.0))}
        for m in _models():
            for n in (1, 2, 3):
                xi = xi_builder(m.d)
                a = price_american(m, payoffs[m.d], n, xi=xi).value
                b = enumerate_stopping_oracle(m, payoffs[m.d], n, xi=xi)
                worst = max(worst, abs(a - b))
        return worst <= TOL, f"max |lattice - enumeration| {worst:.2e}"
    check("bruteforce_equality", brute_force)

    def coherence():
        a = poisson_mixture_european("put", 1.0, 1.1, 0.25, 0.04, 0.7, 0.0, -0.3)
        b = black_scholes("put", 1.0, 1.1, 0.25, 0.04, 0.7)
        return abs(a - b) <= TOL, f"|mixture - bs| {abs(a - b):.2e}"
    check("oracle_coherence", coherence)

    def parity():
        c = black_scholes("call", 1.0, 0.9, 0.3, 0.05, 2.0)
        p = black_scholes("put", 1.0, 0.9, 0.3, 0.05, 2.0)
        gap = abs(c - p - (1.0 - 0.9 * math.exp(-0.1)))
        return gap <= TOL, f"parity gap {gap:.2e}"
    check("put_call_parity", parity)

    def discretization():
        law = DiscreteLaw([[-0.45], [0.3], [1.7]], [0.3, 0.5, 0.2])
        worst = -np.inf
        for n in (16, 256, 4096):
            disc = discretize_jumps(law, n)
            mapped = discretize_values(law.values, n, disc.levels)
            err = float(law.probs @ np.abs(mapped - law.values)[:, 0])
            worst = max(worst, err / n**-0.125)
        return worst < 1.0, f"max E|U-U^n| / n^(-1/8) = {worst:.3f}"
    check("jump_discretization_bound", discretization)

    def lipschitz():
        worst = 0.0
        for p in (Payoff("BasketPut", 1.0), Payoff("BasketCall", 1.0, (2.0, 3.0)),
                  Payoff("MaxCall", 1.0, (1.0, 1.0)), Payoff("MinPut", 1.0, (1.0, 1.0))):
            worst = max(worst, lipschitz_probe(p, 2000, seed=1) - p.lipschitz)
        return worst <= 1e-9, f"max excess over declared L {worst:.2e}"
    check("payoff_lipschitz", lipschitz)

    def dominance():
        m = _models()[1]
        p = Payoff("BasketPut", 1.0)
        xi = xi_builder(1)
        a = price_american(m, p, 32, xi=xi).value
        e = price_european(m, p, 32, xi=xi).value
        return a >= e and a >= p(m.spot), f"american {a:.6f} european {e:.6f}"
    check("american_dominates_european", dominance)

    return results


def corrupted_xi(d: int) -> XiTable:
    """Test hook: a xi table whose first row is perturbed."""
    xi = build_xi(d)
    rows = np.array(xi.rows)
    rows[0] *= 1.01
    return XiTable(d=d, rows=rows, matrix=xi.matrix, method="corrupted")
