import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merton_lattice.errors import InconsistentCounts, ModelError, NegativeDiffusionFactor, TailNotResolvable
from merton_lattice.lattice import (
    StateKey,
    build_lattice,
    build_xi,
    discretize_jumps,
    discretize_values,
    grid_point,
    grid_spacing,
    grid_value,
    prepare_jumps,
    state_price,
    truncation_level,
)
from merton_lattice.model import DiscreteLaw, SamplerLaw, make_model, validate_model

from conftest import SHIPPED, load_shipped


# -- xi ---------------------------------------------------------------------


def test_xi_d1_hand_householder():
    xi = build_xi(1)
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(xi.matrix, [[-s, s], [s, s]], atol=1e-15)
    np.testing.assert_allclose(xi.rows[:, 0], [-1.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("d", range(1, 9))
def test_xi_identities(d):
    xi = build_xi(d)
    A = xi.matrix
    np.testing.assert_allclose(A @ A.T, np.eye(d + 1), atol=1e-12)
    np.testing.assert_allclose(A[:, -1], np.full(d + 1, 1 / math.sqrt(d + 1)), atol=1e-15)
    errs = xi.moment_errors()
    assert max(errs.values()) <= 1e-12
    np.testing.assert_allclose((xi.rows**2).sum(axis=1), d, atol=1e-12)


def test_xi_d2_norms():
    xi = build_xi(2)
    assert xi.rows.shape == (3, 2)
    np.testing.assert_allclose((xi.rows**2).sum(axis=1), [2, 2, 2], atol=1e-12)
    np.testing.assert_allclose(xi.rows.sum(axis=0), [0, 0], atol=1e-12)


@pytest.mark.parametrize("d", [1, 3])
def test_xi_law_of_large_numbers(d):
    xi = build_xi(d)
    rng = np.random.default_rng(2024)
    draws = xi.rows[rng.integers(0, d + 1, 1_000_000)]
    se = 1 / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0)) < 5 * se)
    cov = np.cov(draws.T).reshape(d, d)
    # entries of xi xi^T are bounded by d, so their standard errors are at most d/sqrt(N)
    assert np.all(np.abs(cov - np.eye(d)) < 5 * d * se)


# -- jump grid ----------------------------------------------------------------


def test_grid_hand_lookup_n256():
    assert grid_spacing(256) == 0.5
    np.testing.assert_allclose(grid_value(np.arange(1, 9), 256), np.arange(1, 9) / 4 - 1)
    assert grid_point(-0.3, 256) == -0.25
    assert grid_point(0.49, 256) == 0.5
    assert grid_point(-0.25, 256) == -0.25  # right-closed cells
    assert discretize_values(0.49, 256, levels=6) == 0.5
    assert discretize_values(0.49, 256, levels=5) == 0.0


def test_native_mode_unchanged():
    law = DiscreteLaw([[-0.5]], [1.0])
    assert discretize_jumps(law, 64, mode="native") is law


def test_native_mode_needs_finite_support():
    law = SamplerLaw("uniform", {"low": [-0.5], "high": [0.5]})
    with pytest.raises(ModelError):
        discretize_jumps(law, 64, mode="native")


@given(u=st.floats(-0.999, 5.0), n=st.integers(1, 10**6))
@settings(max_examples=300, deadline=None)
def test_discretization_pointwise(u, n):
    h = grid_spacing(n)
    mapped = float(grid_point(u, n))
    assert 0 <= mapped - u < h / 2 + 1e-15


def _tail_condition(law, n, M):
    g = grid_value(M, n)
    return float(law.probs @ np.where(law.values > g, law.values, 0.0).sum(axis=1))


@pytest.mark.parametrize("n", [1, 16, 256, 4096, 10**6])
def test_truncation_level_minimal(n):
    law = DiscreteLaw([[-0.4, 0.2], [0.9, -0.3], [2.5, 0.1]], [0.2, 0.5, 0.3])
    M = truncation_level(law, n)
    h = grid_spacing(n)
    assert _tail_condition(law, n, M) < h / 2
    assert grid_value(M, n) >= 0
    if M > 1 and grid_value(M - 1, n) >= 0:
        assert _tail_condition(law, n, M - 1) >= h / 2


def test_discretized_bound_exact_discrete():
    law = DiscreteLaw([[-0.45], [0.3], [1.7]], [0.3, 0.5, 0.2])
    for n in (1, 16, 256, 4096):
        disc = discretize_jumps(law, n)
        assert disc.origin == "discretized" and disc.n == n
        mapped = discretize_values(law.values, n, disc.levels)[:, 0]
        assert float(law.probs @ np.abs(mapped - law.values[:, 0])) < n**-0.125
        assert math.isclose(float(disc.probs.sum()), 1.0, abs_tol=1e-15)


def test_sampler_discretization_bound():
    law = SamplerLaw("lognormal", {"mean": [-0.1], "std": [0.3]}, seed=4)
    for n in (16, 256):
        disc = discretize_jumps(law, n, tail_samples=50_000)
        u = law.reference_sample(100_000, seed=99)
        err = np.abs(discretize_values(u, n, disc.levels) - u).mean(axis=0)
        assert np.all(err < n**-0.125)


def test_tail_not_resolvable():
    heavy = DiscreteLaw([[0.0], [1e6]], [1 - 1e-3, 1e-3])
    with pytest.raises(TailNotResolvable):
        truncation_level(heavy, 16)


# -- lattice ----------------------------------------------------------------


def test_d1_unit_vol_single_step():
    m = make_model([1.0], 0.05, 1.0, [[1.0]])
    spec = build_lattice(m, None, 1)
    assert spec.n_diff * spec.n_jump == 2
    np.testing.assert_allclose(sorted(b.factor[0] for b in spec.branches), [0.0, 2 * math.exp(0.05)], atol=1e-15)
    assert [b.prob for b in spec.branches] == [0.5, 0.5]


def test_no_jumps_collapses_branches(model_2d):
    m = make_model([1.0, 1.0], 0.05, 1.0, [[0.2, 0.0], [0.0, 0.3]])
    spec = build_lattice(m, None, 10)
    assert len(spec.branches) == 3
    assert len(build_lattice(model_2d, None, 10).branches) == 3 * 3


def test_negative_diffusion_factor():
    m = make_model([1.0], 0.05, 1.0, [[2.0]])
    with pytest.raises(NegativeDiffusionFactor):
        build_lattice(m, None, 1)
    build_lattice(m, None, 4)  # sqrt(1/4) * 2 = 1, factor 0 is allowed


def test_jump_probability(jump_model):
    spec = build_lattice(jump_model, None, 8)
    assert spec.jump_prob == pytest.approx(1 - math.exp(-0.5 / 8), rel=1e-15)
    assert spec.jump_probs[0] == pytest.approx(math.exp(-0.5 / 8), rel=1e-15)


@pytest.mark.parametrize("n", [1, 2, 7, 64, 500])
def test_martingale_identity(n, jump_model, model_2d):
    for m in (jump_model, model_2d):
        spec = build_lattice(m, None, n)
        assert spec.martingale_residual() <= 1e-12
        assert spec.probability_residual() <= 1e-12
        assert all(b.prob >= 0 for b in spec.branches)


def test_growth_rate_count_independent_of_n(model_2d):
    counts = {len(build_lattice(model_2d, None, n).branches) for n in (1, 5, 50, 400)}
    assert counts == {(2 + 1) * (2 + 1)}


@pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.stem)
def test_shipped_lattices_martingale(path):
    cfg = load_shipped(path)
    m = validate_model(cfg.model)
    for n in sorted(set((cfg.engine.n_list or []) + [cfg.engine.n])):
        jumps = prepare_jumps(m, n, cfg.engine.jump_mode)
        spec = build_lattice(m, jumps, n)
        assert spec.martingale_residual() <= 1e-12


# -- state prices -------------------------------------------------------------


def test_state_price_examples():
    m = make_model([1.3], 0.05, 1.0, [[1.0]])
    spec = build_lattice(m, None, 1)
    assert state_price(m.spot, StateKey(0, (0, 0), (0,)), spec).tolist() == [1.3]
    up = state_price(m.spot, StateKey(1, (0, 1), (1,)), spec)
    assert up[0] == pytest.approx(1.3 * math.exp(0.05) * 2, rel=1e-15)


def test_state_price_order_independent(model_2d):
    spec = build_lattice(model_2d, None, 6)
    rng = np.random.default_rng(0)
    path = [(rng.integers(3), rng.integers(3)) for _ in range(6)]
    # sequential products in two different orders agree with the count form to rounding
    dc = np.bincount([w for w, _ in path], minlength=3)
    jc = np.bincount([j for _, j in path], minlength=3)
    key = StateKey(6, tuple(dc), tuple(jc))
    direct = state_price(model_2d.spot, key, spec)
    for order in (path, path[::-1]):
        s = np.array(model_2d.spot)
        for w, j in order:
            s = s * spec.diff_factors[w] * spec.jump_factors[j]
        np.testing.assert_allclose(s, direct, rtol=1e-14)
    again = StateKey(6, tuple(int(x) for x in dc), tuple(int(x) for x in jc))
    assert state_price(model_2d.spot, again, spec).tobytes() == direct.tobytes()


@pytest.mark.parametrize(
    "key",
    [StateKey(2, (1, 0), (2,)), StateKey(1, (1, 0, 0), (1,)), StateKey(1, (2, -1), (1,)), StateKey(5, (5, 0), (5,))],
)
def test_state_price_inconsistent(key):
    m = make_model([1.0], 0.05, 1.0, [[0.2]])
    spec = build_lattice(m, None, 3)
    with pytest.raises(InconsistentCounts):
        state_price(m.spot, key, spec)
