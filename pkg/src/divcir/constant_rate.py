"""Closed-form dividend problem with a constant discount rate.

With rho constant the value solves (sigma^2/2) v'' + mu v' - rho0 v = 0 below
the barrier, pasted C^2 onto the slope-one continuation above it.  The
characteristic roots give the barrier in closed form via the smooth-fit
condition v''(z*) = 0, and the normalization v'(z*) = 1 pins the scale.  The
derivative profile feeds the low-rate Dirichlet edge of the 2-D solver, and
the barrier values for the reference parameter set anchor the acceptance
suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams

__all__ = [
    "ConstantRateSolution",
    "characteristic_roots",
    "solve_constant_rate",
    "barrier",
    "value_and_derivative",
    "liquidation_value",
]


def characteristic_roots(params: ModelParams, rho0: float):
    """Roots of (sigma^2/2) x^2 + mu x - rho0 = 0; theta1 > 0 > theta2."""
    if rho0 <= 0:
        raise ValueError("rho0 must be positive")
    if params.mu <= 0:
        raise ValueError("needs mu > 0 (liquidation_value covers mu <= 0)")
    mu, s2 = params.mu, params.sigma**2
    disc = math.sqrt(mu**2 + 2.0 * s2 * rho0)
    return (-mu + disc) / s2, (-mu - disc) / s2


@dataclass(frozen=True)
class ConstantRateSolution:
    """Barrier solution of the constant-rate problem."""

    params: ModelParams
    rho0: float
    theta1: float
    theta2: float
    z_star: float

    def value_and_derivative(self, z):
        """(value, derivative) at surplus level z >= alpha.

        Below the barrier the value is
        (e^{th1 x} - e^{th2 x}) / (th1 e^{th1 x*} - th2 e^{th2 x*}) with
        x = z - alpha; above it extends linearly with slope one.  The
        derivative is continuous, >= 1, and equals 1 from the barrier on.
        """
        z = np.asarray(z, dtype=float)
        x = z - self.params.alpha
        xs = self.z_star - self.params.alpha
        th1, th2 = self.theta1, self.theta2
        norm = th1 * math.exp(th1 * xs) - th2 * math.exp(th2 * xs)
        xc = np.minimum(x, xs)
        v_in = (np.exp(th1 * xc) - np.exp(th2 * xc)) / norm
        u_in = (th1 * np.exp(th1 * xc) - th2 * np.exp(th2 * xc)) / norm
        v_star = (math.exp(th1 * xs) - math.exp(th2 * xs)) / norm
        value = np.where(x <= xs, v_in, v_star + (x - xs))
        deriv = np.where(x <= xs, u_in, 1.0)
        if value.ndim:
            return value, deriv
        return float(value), float(deriv)

    def to_dict(self):
        return {
            "rho0": self.rho0,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "z_star": self.z_star,
        }


def solve_constant_rate(params: ModelParams, rho0: float) -> ConstantRateSolution:
    th1, th2 = characteristic_roots(params, rho0)
    z_star = params.alpha + math.log(th2**2 / th1**2) / (th1 - th2)
    return ConstantRateSolution(params, rho0, th1, th2, z_star)


def barrier(params: ModelParams, rho0: float) -> float:
    """Optimal constant barrier z* = alpha + ln(th2^2/th1^2)/(th1 - th2)."""
    return solve_constant_rate(params, rho0).z_star


def value_and_derivative(params: ModelParams, rho0: float, z):
    return solve_constant_rate(params, rho0).value_and_derivative(z)


def liquidation_value(params: ModelParams, z):
    """Value z - alpha of paying everything at once; optimal when mu <= 0."""
    z = np.asarray(z, dtype=float)
    out = z - params.alpha
    return out if out.ndim else float(out)
