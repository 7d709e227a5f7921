"""Acceptance criteria, one test each.

Every test appends a ``PASS``/``FAIL`` line to the terminal summary before
asserting, so a single run lists the status of every criterion.
"""

import itertools
import math
import time
import tracemalloc

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, SHIPPED, load_shipped
from merton_lattice.cli import _build
from merton_lattice.convergence import run_study
from merton_lattice.lattice import build_lattice, build_xi, discretize_jumps, discretize_values, prepare_jumps
from merton_lattice.model import DiscreteLaw, Payoff, SamplerLaw, make_model, payoff_eval
from merton_lattice.montecarlo import MCConfig, black_scholes, lsmc_american, mc_european, poisson_mixture_european
from merton_lattice.pricer import enumerate_stopping_oracle, price_american, price_european

TOL_EXACT = 1e-12
TOL_CALL = 1e-10
MC_SEED = 20240601


def record(name, ok, detail, seconds, limit):
    ok = bool(ok) and seconds < limit
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail} [{seconds:.2f}s < {limit:g}s]")
    assert ok, f"{name}: {detail} in {seconds:.2f}s"


def _n_of(cfg):
    return cfg.engine.n or max(cfg.engine.n_list)


def test_xi_identities():
    t0 = time.perf_counter()
    worst = max(max(build_xi(d).moment_errors().values()) for d in range(1, 7))
    pm_one = np.sort(build_xi(1).rows[:, 0])
    ok = worst <= TOL_EXACT and np.allclose(pm_one, [-1.0, 1.0], rtol=0, atol=TOL_EXACT)
    record("xi_identities", ok, f"max moment deviation {worst:.2e} (tol 1e-12), d=1 rows {pm_one.tolist()}",
           time.perf_counter() - t0, 1.0)


def test_martingale_identity_shipped():
    # jump laws are prepared outside the timed region: sampler discretisation draws 1e5 tail samples
    specs = []
    for path in SHIPPED:
        cfg = load_shipped(path)
        model, _ = _build(cfg)
        for n in sorted({_n_of(cfg), *(cfg.engine.n_list or [])}):
            specs.append((model, prepare_jumps(model, n, cfg.engine.jump_mode), n))
    t0 = time.perf_counter()
    worst = 0.0
    for model, jumps, n in specs:
        spec = build_lattice(model, jumps, n)
        worst = max(worst, spec.martingale_residual(), spec.probability_residual())
    record("martingale_identity", worst <= TOL_EXACT,
           f"{len(specs)} specs, max residual {worst:.2e} (tol 1e-12)", time.perf_counter() - t0, 1.0)


def _brute_force_models():
    laws = {
        1: {1: {"type": "discrete", "values": [[-0.3]], "probs": [1.0]},
            2: {"type": "discrete", "values": [[-0.2], [0.35]], "probs": [0.45, 0.55]}},
        2: {1: {"type": "discrete", "values": [[-0.15, 0.1]], "probs": [1.0]},
            2: {"type": "discrete", "values": [[0.1, -0.2], [-0.1, 0.4]], "probs": [0.5, 0.5]}},
    }
    vols = {1: [[0.3]], 2: [[0.2, 0.0], [0.1, 0.25]]}
    spots = {1: [1.0], 2: [1.0, 0.9]}
    for d, J in itertools.product((1, 2), (0, 1, 2)):
        model = make_model(spots[d], 0.04, 0.75, vols[d], 1.5 if J else 0.0, laws[d].get(J))
        w = (1.0,) * d
        for payoff in (Payoff("BasketPut", 1.05 * d, w), Payoff("BasketCall", 0.95 * d, w)):
            yield d, J, model, payoff


def test_brute_force_equality():
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for d, J, model, payoff in _brute_force_models():
        for n in (1, 2, 3):
            a = price_american(model, payoff, n).value
            b = enumerate_stopping_oracle(model, payoff, n)
            worst = max(worst, abs(a - b))
            count += 1
    ok = count >= 20 and worst <= TOL_EXACT
    record("brute_force_equality", ok, f"{count} configs, max |lattice - enumeration| {worst:.2e} (tol 1e-12)",
           time.perf_counter() - t0, 10.0)


def test_jump_discretization():
    t0 = time.perf_counter()
    laws = {
        "uniform(-0.5,0.5)": SamplerLaw("uniform", {"low": -0.5, "high": 0.5}, seed=5),
        "two_point": DiscreteLaw([[-0.3], [0.45]], [0.4, 0.6]),
    }
    rng = np.random.Generator(np.random.Philox(MC_SEED))
    worst, parts = 0.0, []
    for name, law in laws.items():
        draws = law.draw(rng, 100_000)
        for n in (16, 256, 4096):
            levels = discretize_jumps(law, n).levels
            err = float(np.mean(np.abs(discretize_values(draws, n, levels) - draws)[:, 0]))
            ratio = err / n**-0.125
            worst = max(worst, ratio)
            parts.append(f"{name}@{n}={ratio:.3f}")
    record("jump_discretization", worst < 1.0,
           f"max E|U-U^n| / n^(-1/8) = {worst:.3f} (< 1); " + " ".join(parts), time.perf_counter() - t0, 5.0)


@pytest.mark.slow
def test_european_oracles():
    t0 = time.perf_counter()
    bs = make_model([1.0], 0.05, 1.0, [[0.2]])
    jm = make_model([1.0], 0.05, 1.0, [[0.2]], 0.5, {"type": "discrete", "values": [[-0.25]], "probs": [1.0]})
    cfg = MCConfig(paths=1_000_000, seed=MC_SEED)
    ok, parts = True, []
    for label, model, oracle, rel_tol in (
        ("bs", bs, black_scholes("call", 1.0, 1.0, 0.2, 0.05, 1.0), 0.005),
        ("jump", jm, poisson_mixture_european("call", 1.0, 1.0, 0.2, 0.05, 1.0, 0.5, -0.25), 0.01),
    ):
        payoff = Payoff("BasketCall", 1.0)
        lat = price_european(model, payoff, 512).value
        mc = mc_european(model, payoff, cfg, threads=4)
        rel = abs(lat - oracle) / oracle
        this = rel <= rel_tol and mc.contains(lat) and mc.contains(oracle)
        ok &= this
        parts.append(
            f"{label}: lattice {lat:.8f} oracle {oracle:.8f} rel {rel:.2e} (tol {rel_tol:g}) "
            f"mc {mc.mean:.6f}+/-{mc.half_width:.6f}"
        )
    record("european_oracles", ok, "; ".join(parts), time.perf_counter() - t0, 120.0)


@pytest.mark.slow
def test_american_coherence():
    t0 = time.perf_counter()
    bs = make_model([1.0], 0.05, 1.0, [[0.2]])
    call = Payoff("BasketCall", 1.0)
    gap = abs(price_american(bs, call, 256).value - price_european(bs, call, 256).value)
    ok, bad = gap <= TOL_CALL, []
    for path in SHIPPED:
        cfg = load_shipped(path)
        model, payoff = _build(cfg)
        n = _n_of(cfg)
        jumps = prepare_jumps(model, n, cfg.engine.jump_mode)
        am = price_american(model, payoff, n, jumps).value
        eu = price_european(model, payoff, n, jumps).value
        intrinsic = float(payoff_eval(payoff, model.spot, 0.0))
        if not (am >= eu and am >= intrinsic):
            bad.append(f"{path.stem}: am {am} eu {eu} intrinsic {intrinsic}")
    ok &= not bad
    record("american_coherence", ok,
           f"|am - eu| call {gap:.2e} (tol 1e-10); {len(SHIPPED)} shipped configs; violations {bad or 'none'}",
           time.perf_counter() - t0, 60.0)


def test_convergence_shape():
    t0 = time.perf_counter()
    cfg = load_shipped(next(p for p in SHIPPED if p.stem == "american_put_bs"))
    model, payoff = _build(cfg)
    mc = MCConfig(cfg.mc.paths, cfg.mc.steps, cfg.mc.seed, cfg.mc.basis_degree)
    rep = run_study(model, payoff, [8, 16, 32, 64, 128, 256], mc_cfg=mc, threads=4)
    ok = rep.fit.beta >= 0.125 and rep.inversions <= 1 and math.isfinite(rep.max_scaled_error)
    record("convergence_shape", ok,
           f"beta {rep.fit.beta:.3f} (>= 0.125), inversions {rep.inversions} (<= 1), "
           f"max e_n n^(1/8) {rep.max_scaled_error:.3e}, ref {rep.reference:.8f}, "
           f"lsmc {rep.lsmc.mean:.6f}+/-{rep.lsmc.half_width:.6f}",
           time.perf_counter() - t0, 300.0)


@pytest.mark.slow
def test_performance_envelope():
    cfg = load_shipped(next(p for p in SHIPPED if p.stem == "basket_put_2d"))
    model, payoff = _build(cfg)
    n = 64
    jumps = prepare_jumps(model, n, cfg.engine.jump_mode)
    tracemalloc.start()
    t0 = time.perf_counter()
    res = price_american(model, payoff, n, jumps)
    seconds = time.perf_counter() - t0
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    expected = math.comb(n + 2, 2) ** 2
    ok = res.states_per_step[-1] == expected and peak < 4 * 2**30
    record("performance_envelope", ok,
           f"final states {res.states_per_step[-1]} (expected {expected}), peak {peak / 2**20:.0f} MiB (< 4 GiB), "
           f"value {res.value:.10f}", seconds, 60.0)


def test_determinism_across_threads():
    t0 = time.perf_counter()
    jm = make_model([1.0], 0.05, 1.0, [[0.2]], 0.5, {"type": "discrete", "values": [[-0.25]], "probs": [1.0]})
    put = Payoff("BasketPut", 1.0)
    cfg = MCConfig(paths=200_000, steps=20, seed=MC_SEED)
    checks = {}
    eu = [mc_european(jm, put, cfg, threads=t) for t in (1, 4)]
    checks["mc_european"] = eu[0].mean == eu[1].mean and eu[0].stderr == eu[1].stderr
    am = [lsmc_american(jm, put, cfg, threads=t) for t in (1, 4)]
    checks["lsmc_american"] = am[0].mean == am[1].mean and am[0].stderr == am[1].stderr
    uni = SamplerLaw("uniform", {"low": -0.5, "high": 0.5}, seed=5)
    da, db = discretize_jumps(uni, 256), discretize_jumps(uni, 256)
    checks["sampler_discretization"] = np.array_equal(da.values, db.values) and np.array_equal(da.probs, db.probs)
    studies = [run_study(jm, put, [8, 16, 32], mc_cfg=MCConfig(paths=20_000, steps=10, seed=MC_SEED), threads=t)
               for t in (1, 3)]
    checks["run_study"] = (
        [r.value for r in studies[0].rows] == [r.value for r in studies[1].rows]
        and studies[0].lsmc.mean == studies[1].lsmc.mean
    )
    failed = [k for k, v in checks.items() if not v]
    record("determinism", not failed, f"seed {MC_SEED}; threads 1 vs 3/4; mismatches {failed or 'none'}",
           time.perf_counter() - t0, 120.0)
