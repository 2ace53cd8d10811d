import math

import numpy as np
import pytest

from divcir import (
    DiscountSpec,
    cir_mean_var,
    integrated_rate_increment,
    laplace_coefficients,
    laplace_integrated_cir,
    mc_integrated_laplace,
    sample_transition,
)


def test_laplace_is_one_at_time_zero(params):
    for beta in (0.05, 1.0, 7.0):
        for r in (0.0, 0.15, 2.0):
            assert laplace_integrated_cir(params, beta, 0.0, r) == pytest.approx(1.0)


def test_laplace_in_unit_interval_and_monotone(params):
    betas = np.linspace(0.05, 5.0, 10)
    ts = np.linspace(0.1, 20.0, 10)
    rs = np.linspace(0.0, 2.0, 10)
    vals = np.array([[[laplace_integrated_cir(params, b, t, r) for r in rs] for t in ts] for b in betas])
    assert np.all(vals > 0.0) and np.all(vals <= 1.0)
    assert np.all(np.diff(vals, axis=0) < 0)  # decreasing in beta
    assert np.all(np.diff(vals, axis=1) < 0)  # decreasing in t
    assert np.all(np.diff(vals, axis=2) < 0)  # decreasing in r


def test_laplace_log_domain_no_overflow(params):
    with np.errstate(over="raise"):
        val = laplace_integrated_cir(params, 1.0, 1e4, 0.15)
    assert 0.0 <= val < 1e-300 or val == 0.0


def test_log_coefficient_asymptotic_slope(params):
    coeff = laplace_coefficients(params, 1.0)
    t = 50.0
    assert abs(coeff.A(t) / t - coeff.asymptotic_slope) < 0.01


def test_laplace_against_monte_carlo(params):
    means, ses = mc_integrated_laplace(params, [1.0], [1.0], 0.15, 100_000, 1e-3, seed=42)
    closed = laplace_integrated_cir(params, 1.0, 1.0, 0.15)
    assert abs(means[0, 0] - closed) < 3.0 * ses[0, 0]


def test_mean_var_fixed_point_and_degenerate(params):
    m, v = cir_mean_var(params, params.theta, 3.7)
    assert m == pytest.approx(params.theta)
    m0, v0 = cir_mean_var(params, 0.42, 0.0)
    assert m0 == pytest.approx(0.42) and v0 == pytest.approx(0.0)


def test_transition_moments_match_formula(params):
    rng = np.random.default_rng(7)
    n = 100_000
    draws = sample_transition(params, np.full(n, 0.15), 2.0, rng)
    m, v = cir_mean_var(params, 0.15, 2.0)
    se_mean = math.sqrt(v / n)
    assert abs(draws.mean() - m) < 3.0 * se_mean
    se_var = draws.var(ddof=1) * math.sqrt(2.0 / n) * 2.0  # generous
    assert abs(draws.var(ddof=1) - v) < 3.0 * se_var + 1e-4


@pytest.mark.parametrize("dt", [0.01, 0.1, 1.0])
@pytest.mark.parametrize("r", [0.05, 0.15, 0.5])
def test_transition_two_moment_lattice(params, dt, r):
    rng = np.random.default_rng(int(1000 * dt) * 7 + int(100 * r))
    n = 50_000
    draws = sample_transition(params, np.full(n, r), dt, rng)
    m, v = cir_mean_var(params, r, dt)
    assert abs(draws.mean() - m) < 4.0 * math.sqrt(v / n)
    assert abs(draws.var(ddof=1) - v) < 5.0 * v * math.sqrt(2.0 / n) + 1e-6


def test_transition_determinism_and_positivity(params):
    a = sample_transition(params, np.full(10, 0.15), 0.5, np.random.default_rng(5))
    b = sample_transition(params, np.full(10, 0.15), 0.5, np.random.default_rng(5))
    assert np.array_equal(a, b)
    big = sample_transition(params, np.full(1_000_000, 0.15), 0.1, np.random.default_rng(6))
    assert np.all(big > 0.0)


def test_integrated_rate_constant_path_exact(params):
    disc = DiscountSpec("constant", 0.07)
    path = np.full(101, params.theta)
    out = integrated_rate_increment(path, 0.1, disc)
    assert out[0] == 0.0
    assert out[-1] == pytest.approx(0.07 * 10.0)
    assert np.all(np.diff(out) >= 0.0)


def test_integrated_rate_tabulated_nondecreasing(params):
    disc = DiscountSpec("tabulated", samples=((0.0, 0.01), (0.5, 0.4)))
    rng = np.random.default_rng(3)
    path = np.abs(rng.normal(0.15, 0.05, 500))
    out = integrated_rate_increment(path, 0.01, disc)
    assert np.all(np.diff(out) >= 0.0)


def test_integrated_rate_refinement_consistency(params):
    """Halving dt moves the discount-factor estimate by less than its
    standard error (linear rho equals a constant factor times the raw
    integrated-rate transform)."""
    n = 100_000
    coarse, se_c = mc_integrated_laplace(params, [1.0], [1.0], 0.15, n, 0.01, seed=9)
    fine, se_f = mc_integrated_laplace(params, [1.0], [1.0], 0.15, n, 0.005, seed=9)
    assert abs(coarse[0, 0] - fine[0, 0]) < max(se_c[0, 0], se_f[0, 0])
