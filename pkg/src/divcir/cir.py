"""CIR short-rate transforms and simulation.

Closed-form pieces: the Laplace transform of the integrated rate
E[exp(-beta * int_0^t R du)] = exp(-A(t) - r*G(t)) with eta = sqrt(k^2 +
2*gamma^2*beta), and the conditional mean/variance of the transition law.
The log-domain form of A avoids overflow of exp(eta*t) for large horizons.

Simulation: exact transition sampling from the scaled noncentral chi-square
law (the default), a full-truncation Euler engine for fine-step integrated
rates (driven by the counter-based kernels), and the trapezoidal cumulative
discount integral along a sampled path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import DiscountSpec, ModelParams

__all__ = [
    "LaplaceCoefficients",
    "laplace_coefficients",
    "laplace_integrated_cir",
    "cir_mean_var",
    "sample_transition",
    "integrated_rate_increment",
    "mc_integrated_laplace",
]


@dataclass(frozen=True)
class LaplaceCoefficients:
    """Log-Laplace coefficients of the integrated CIR rate for one beta.

    A(0) = G(0) = 0 so the transform is 1 at t = 0; G >= 0; A grows
    asymptotically linearly with slope (k*theta/gamma^2)*(eta - k).
    """

    k: float
    theta: float
    gamma: float
    beta: float
    eta: float

    def G(self, t):
        t = np.asarray(t, dtype=float)
        e = np.exp(-self.eta * t)
        out = 2.0 * self.beta * (1.0 - e) / (self.eta * (1.0 + e) + self.k * (1.0 - e))
        return out if out.ndim else float(out)

    def A(self, t):
        # A(t) = -(2k theta/gamma^2) * ln[ 2 eta e^{(eta+k)t/2} /
        #        ((eta+k)(e^{eta t}-1) + 2 eta) ], rewritten in the log domain
        t = np.asarray(t, dtype=float)
        e = np.exp(-self.eta * t)
        c = 2.0 * self.k * self.theta / self.gamma**2
        out = c * (
            0.5 * (self.eta - self.k) * t
            + np.log((self.eta + self.k) * (1.0 - e) + 2.0 * self.eta * e)
            - math.log(2.0 * self.eta)
        )
        return out if out.ndim else float(out)

    @property
    def asymptotic_slope(self) -> float:
        """lim A(t)/t = (k*theta/gamma^2)*(eta - k)."""
        return self.k * self.theta / self.gamma**2 * (self.eta - self.k)


def laplace_coefficients(params: ModelParams, beta: float) -> LaplaceCoefficients:
    if beta <= 0:
        raise ValueError("beta must be positive")
    eta = math.sqrt(params.k**2 + 2.0 * params.gamma**2 * beta)
    return LaplaceCoefficients(params.k, params.theta, params.gamma, beta, eta)


def laplace_integrated_cir(params: ModelParams, beta: float, t, r):
    """E[exp(-beta * int_0^t R_u du) | R_0 = r]; in (0, 1], strictly
    decreasing in each of t, r, beta."""
    coeff = laplace_coefficients(params, beta)
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    out = np.exp(-coeff.A(t) - r * coeff.G(t))
    return out if out.ndim else float(out)


def cir_mean_var(params: ModelParams, r, t):
    """Conditional mean and variance of R_t given R_0 = r."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    k, theta, gamma = params.k, params.theta, params.gamma
    e = np.exp(-k * t)
    mean = r * e + theta * (1.0 - e)
    var = r * gamma**2 / k * (e - e**2) + theta * gamma**2 / (2.0 * k) * (1.0 - e) ** 2
    if mean.ndim:
        return mean, var
    return float(mean), float(var)


def sample_transition(params: ModelParams, r, dt: float, rng: np.random.Generator):
    """Draw R_{t+dt} given R_t = r from the exact transition law: a scaled
    noncentral chi-square with 4*k*theta/gamma^2 degrees of freedom.

    Vectorized over r; reproducible given the generator state; strictly
    positive under the Feller condition.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k, theta, gamma = params.k, params.theta, params.gamma
    r = np.asarray(r, dtype=float)
    c = 2.0 * k / (gamma**2 * (1.0 - math.exp(-k * dt)))
    df = 4.0 * k * theta / gamma**2
    nc = 2.0 * c * r * math.exp(-k * dt)
    out = rng.noncentral_chisquare(df, nc, size=r.shape if r.ndim else None) / (2.0 * c)
    return out if r.ndim else float(out)


def integrated_rate_increment(path, dt: float, disc: DiscountSpec):
    """Cumulative trapezoidal integral of rho(R) along a rate path sampled on
    a uniform dt grid; starts at 0 and is nondecreasing since rho >= 0."""
    path = np.asarray(path, dtype=float)
    vals = disc.rho(path)
    out = np.empty_like(vals)
    out[0] = 0.0
    np.cumsum(0.5 * (vals[1:] + vals[:-1]) * dt, out=out[1:])
    return out


def mc_integrated_laplace(params: ModelParams, beta, horizons, r: float,
                          n_paths: int, dt: float, seed: int):
    """Monte Carlo estimates of E[exp(-beta * int_0^t R)] on a (beta, t)
    lattice, sharing one set of fine-grid Euler paths per starting rate.

    Returns (means, ses) with shape (len(betas), len(horizons)).
    """
    betas = np.atleast_1d(np.asarray(beta, dtype=float))
    horizons = np.atleast_1d(np.asarray(horizons, dtype=float))
    steps = np.round(horizons / dt).astype(np.int64)
    if not np.allclose(steps * dt, horizons, rtol=0, atol=1e-9):
        raise ValueError("each horizon must be a multiple of dt")
    order = np.argsort(steps)
    rec = steps[order]
    n_steps = int(rec[-1])
    if n_paths >= _kernels.MAX_PATHS or n_steps >= _kernels.MAX_STEPS:
        raise ValueError("path/step count exceeds the counter layout")
    cum = np.empty((len(rec), n_paths))
    _kernels.integrated_rate_kernel(
        np.uint64(seed), n_paths, n_steps, dt,
        params.k, params.theta, params.gamma, float(r), rec, cum,
    )
    means = np.empty((len(betas), len(horizons)))
    ses = np.empty_like(means)
    inv = np.empty_like(rec)
    inv[order] = np.arange(len(rec))
    for i, b in enumerate(betas):
        for j in range(len(horizons)):
            x = np.exp(-b * cum[inv[j]])
            means[i, j] = x.mean()
            ses[i, j] = x.std(ddof=1) / math.sqrt(n_paths)
    return means, ses
