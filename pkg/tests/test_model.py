import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divcir import (
    ConfigError,
    DiscountSpec,
    ModelParams,
    discount_from_dict,
    load_model_document,
    params_from_dict,
    tail_rate,
    validate,
    value_upper_bound,
)


def test_validate_paper_set_passes(params, disc_linear):
    report = validate(params, disc_linear)
    assert report.passed
    feller = next(c for c in report.checks if c.name == "feller")
    assert feller.passed  # 2*0.5*0.15 = 0.15 >= 0.3^2 = 0.09


def test_validate_feller_failure():
    bad = ModelParams(mu=1.0, sigma=1.0, alpha=0.0, k=0.5, theta=0.05, gamma=0.5)
    report = validate(bad, DiscountSpec("constant", 0.05))
    feller = next(c for c in report.checks if c.name == "feller")
    assert not feller.passed  # 0.05 < 0.25
    assert not report.passed


def test_validate_zero_discount_floor_fails(params):
    disc = DiscountSpec("tabulated", samples=((0.0, 0.0), (1.0, 0.0)))
    report = validate(params, disc)
    bound = next(c for c in report.checks if c.name == "discount_lower_bound")
    assert not bound.passed


def test_validate_is_pure(params, disc_linear):
    assert validate(params, disc_linear) == validate(params, disc_linear)


def test_tail_rate_values():
    mk = lambda mu, sigma: ModelParams(mu, sigma, 0.0, 0.5, 0.15, 0.3)
    assert tail_rate(mk(1.0, 1.0)) == 2.0
    assert tail_rate(mk(1.0, 2.0)) == 0.5
    assert tail_rate(mk(0.5, 1.0)) == 1.0
    with pytest.raises(ValueError):
        tail_rate(mk(-0.5, 1.0))
    with pytest.raises(ValueError):
        tail_rate(mk(0.0, 1.0))


def test_upper_bound_positive_floor_closed_form(params):
    # p = mu/sigma + c1 sigma/(2 mu); bound = 2 p mu / (c1 sigma)
    assert value_upper_bound(params, DiscountSpec("constant", 0.05)) == pytest.approx(41.0, rel=1e-12)
    assert value_upper_bound(params, DiscountSpec("constant", 1.0)) == pytest.approx(3.0, rel=1e-12)


def test_upper_bound_linear_floor_vs_independent_quadrature(params):
    """c1 = 0, c2 = 1 branch against composite-Simpson quadrature of the
    integrand at two resolutions (independent of scipy's adaptive rule)."""
    from divcir.cir import laplace_coefficients

    disc = DiscountSpec("linear_shift", 0.0)  # rho(r) = r: c1 = 0, c2 = 1
    assert disc.c1 == 0.0 and disc.c2 == 1.0
    got = value_upper_bound(params, disc)

    coeff = laplace_coefficients(params, disc.c2)
    mu, sigma = params.mu, params.sigma

    def integrand_s(s):
        # t = s^2 substitution flattens the 1/sqrt(t) endpoint
        t = s * s
        return math.exp(-coeff.A(t)) * (2.0 * mu**2 / sigma**2 + 3.0 * mu / (sigma * s)) * 2.0 * s

    def simpson(f, a, b, n):
        xs = np.linspace(a, b, 2 * n + 1)
        w = np.ones(2 * n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return (b - a) / (6.0 * n) * float(np.dot(w, [f(x) for x in xs]))

    upper = 60.0  # exp(-A(t)) below 1e-13 for t > upper^... the tail is negligible
    coarse = 1.0 + simpson(integrand_s, 1e-9, math.sqrt(upper), 4000)
    fine = 1.0 + simpson(integrand_s, 1e-9, math.sqrt(upper), 8000)
    assert abs(coarse - fine) < 1e-6
    assert got == pytest.approx(fine, abs=5e-6)
    assert got >= 1.0


@settings(max_examples=50, deadline=None)
@given(
    mu=st.floats(0.1, 5.0),
    sigma=st.floats(0.1, 5.0),
    c1=st.floats(1e-3, 10.0),
)
def test_upper_bound_at_least_one(mu, sigma, c1):
    params = ModelParams(mu, sigma, 0.0, 0.5, 0.15, 0.3)
    assert value_upper_bound(params, DiscountSpec("constant", c1)) >= 1.0


@pytest.mark.parametrize("disc", [
    DiscountSpec("constant", 0.05),
    DiscountSpec("linear_shift", 0.05),
    DiscountSpec("sqrt_shift", 0.05),
    DiscountSpec("tabulated", samples=((0.0, 0.01), (0.2, 0.3), (1.0, 0.9))),
])
def test_rho_nondecreasing_on_random_pairs(disc):
    rng = np.random.default_rng(1234)
    r1 = rng.uniform(0.0, 5.0, 1000)
    r2 = rng.uniform(0.0, 5.0, 1000)
    lo, hi = np.minimum(r1, r2), np.maximum(r1, r2)
    assert np.all(disc.rho(hi) >= disc.rho(lo) - 1e-15)
    assert np.all(disc.rho(lo) >= 0.0)


def test_discount_derived_floor_constants():
    assert DiscountSpec("constant", 0.07).c1 == 0.07
    assert DiscountSpec("constant", 0.07).c2 == 0.0
    lin = DiscountSpec("linear_shift", 0.05)
    assert lin.c1 == 0.05 and lin.c2 == 1.0
    sq = DiscountSpec("sqrt_shift", 0.05)
    assert sq.c1 == pytest.approx(math.sqrt(0.05)) and sq.c2 == 0.0
    tab = DiscountSpec("tabulated", samples=((0.0, 0.02), (1.0, 0.5)))
    assert tab.c1 == 0.02 and tab.c2 == 0.0


def test_tabulated_interpolation_and_extrapolation():
    disc = DiscountSpec("tabulated", samples=((0.1, 0.2), (0.3, 0.4)))
    assert disc.rho(0.2) == pytest.approx(0.3)
    assert disc.rho(0.0) == 0.2  # constant below the first sample
    assert disc.rho(9.0) == 0.4  # constant beyond the last sample


def test_tabulated_requires_increasing_abscissae():
    with pytest.raises(ConfigError):
        DiscountSpec("tabulated", samples=((0.3, 0.1), (0.1, 0.2)))


def test_params_from_dict_rejects_unknown_and_names_missing():
    with pytest.raises(ConfigError, match="unknown"):
        params_from_dict({"mu": 1, "sigma": 1, "alpha": 0, "k": 1, "theta": 1, "gamma": 1, "zeta": 2})
    with pytest.raises(ConfigError, match="sigma"):
        params_from_dict({"mu": 1, "alpha": 0, "k": 1, "theta": 1, "gamma": 1})


def test_load_model_document_roundtrip():
    doc = json.dumps({
        "mu": 1.0, "sigma": 1.0, "alpha": 0.0, "k": 0.5, "theta": 0.15, "gamma": 0.3,
        "discount": {"kind": "sqrt_shift", "r0": 0.05},
    })
    params, disc = load_model_document(doc)
    assert params.theta == 0.15
    assert disc.kind == "sqrt_shift"
    with pytest.raises(ConfigError):
        load_model_document('{"mu": 1.0}')
    with pytest.raises(ConfigError):
        discount_from_dict({"kind": "constant", "rho0": 0.05, "extra": 1})
