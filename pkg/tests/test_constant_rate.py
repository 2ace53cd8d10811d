import math

import numpy as np
import pytest

from divcir import (
    Boundary,
    DiscountSpec,
    ModelParams,
    PathConfig,
    barrier,
    characteristic_roots,
    liquidation_value,
    run_dividend_policy,
    solve_constant_rate,
)


@pytest.mark.parametrize("rho0", [0.05, math.sqrt(0.05)])
def test_roots_satisfy_quadratic(params, rho0):
    th1, th2 = characteristic_roots(params, rho0)
    assert th1 > 0 > th2
    for th in (th1, th2):
        resid = 0.5 * params.sigma**2 * th**2 + params.mu * th - rho0
        assert abs(resid) < 1e-12 * max(1.0, abs(rho0))


def test_roots_reference_values(params):
    # frozen from the quadratic-residual oracle in test_roots_satisfy_quadratic
    th1, th2 = characteristic_roots(params, 0.05)
    assert th1 == pytest.approx(0.0488088, abs=1e-6)
    assert th2 == pytest.approx(-2.0488088, abs=1e-6)
    th1s, th2s = characteristic_roots(params, math.sqrt(0.05))
    assert th1s == pytest.approx(0.2030019, abs=1e-6)
    assert th2s == pytest.approx(-2.2030019, abs=1e-6)


def test_roots_vanishing_rate_limit(params):
    th1, th2 = characteristic_roots(params, 1e-12)
    lam = 2.0 * params.mu / params.sigma**2
    assert abs(th1) < 1e-11
    assert th2 == pytest.approx(-lam, abs=1e-11)


def test_reported_barriers(params):
    assert barrier(params, 0.05) == pytest.approx(3.56, abs=0.01)
    assert barrier(params, math.sqrt(0.05)) == pytest.approx(1.98, abs=0.01)


def test_barrier_decreasing_in_rate(params):
    grid = np.concatenate([np.linspace(0.01, 0.9, 30), [1.0, 10.0, 100.0]])
    zs = [barrier(params, r) for r in grid]
    assert all(b > a for a, b in zip(zs[1:], zs[:-1]))
    assert zs[-1] > params.alpha


def test_value_anchors_and_smooth_fit(params):
    sol = solve_constant_rate(params, 0.05)
    v_alpha, _ = sol.value_and_derivative(params.alpha)
    assert v_alpha == pytest.approx(0.0, abs=1e-14)
    _, u_star = sol.value_and_derivative(sol.z_star)
    assert u_star == pytest.approx(1.0, rel=1e-12)
    # smooth fit: the closed-form second derivative vanishes at the barrier
    x = sol.z_star - params.alpha
    norm = sol.theta1 * math.exp(sol.theta1 * x) - sol.theta2 * math.exp(sol.theta2 * x)
    second = (sol.theta1**2 * math.exp(sol.theta1 * x) - sol.theta2**2 * math.exp(sol.theta2 * x)) / norm
    assert abs(second) < 1e-10


def test_derivative_shape(params):
    sol = solve_constant_rate(params, 0.05)
    zs = np.linspace(params.alpha, sol.z_star + 2.0, 1000)
    _, u = sol.value_and_derivative(zs)
    inside = zs < sol.z_star
    assert np.all(u >= 1.0 - 1e-12)
    assert np.all(u[~inside] == 1.0)
    assert np.all(np.diff(u[inside]) < 0.0)  # strictly concave value below the barrier


def test_liquidation_value(params):
    assert liquidation_value(params, 1.7) == pytest.approx(1.7 - params.alpha)


def test_barrier_strategy_reproduces_value_by_monte_carlo(params):
    """Simulating the flat-barrier payout with a constant rate recovers the
    closed-form value at z0 = 1 within 3 standard errors."""
    disc = DiscountSpec("constant", 0.05)
    sol = solve_constant_rate(params, 0.05)
    v_true, _ = sol.value_and_derivative(1.0)
    cfg = PathConfig(dt=5e-3, t_max=160.0, n_paths=200_000, seed=404)
    est = run_dividend_policy(params, disc, Boundary.flat(sol.z_star), 1.0, 0.15, cfg)
    assert abs(est.mean - v_true) < 3.0 * est.std_error + 5e-3
