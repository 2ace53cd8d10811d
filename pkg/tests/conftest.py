import numpy as np
import pytest

from divcir import DiscountSpec, Grid2D, ModelParams, SolverConfig
from divcir.free_boundary import extract_boundary, integrate_value, solve_penalized

# reference parameter set used throughout (one-year time unit)
PAPER = dict(mu=1.0, sigma=1.0, alpha=0.0, k=0.5, theta=0.15, gamma=0.3)


@pytest.fixture(scope="session")
def params():
    return ModelParams(**PAPER)


@pytest.fixture(scope="session")
def disc_linear():
    return DiscountSpec("linear_shift", 0.05)


@pytest.fixture(scope="session")
def disc_sqrt():
    return DiscountSpec("sqrt_shift", 0.05)


@pytest.fixture(scope="session")
def disc_const():
    return DiscountSpec("constant", 0.05)


@pytest.fixture(scope="session")
def solved_linear_coarse(params, disc_linear):
    """96x96 solve of the linear-discount case for unit tests."""
    grid = Grid2D.uniform(n_r=96, n_z=96)
    u = solve_penalized(SolverConfig(), grid, params, disc_linear)
    b = extract_boundary(u, params, disc_linear)
    v = integrate_value(u)
    return u, v, b
