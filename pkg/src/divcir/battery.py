"""Invariant battery: every theory-backed property of the solved fields and
boundary, plus Monte Carlo cross-checks, as machine-checkable outcomes.

Used by the CLI verify command (exit 4 on any failure) and mirrored by the
acceptance test suite at its pinned tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cir, simulate
from .constant_rate import solve_constant_rate
from .free_boundary import Boundary, ScalarField, hjb_residual, pde_columns
from .model import DiscountSpec, ModelParams, tail_rate, validate, value_upper_bound

__all__ = ["CheckOutcome", "field_invariants", "boundary_invariants", "run_battery"]

TOL_MONO = 1e-8
TOL_CONV = 1e-6
TOL_LIP = 1e-6


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    margin: float  # how far inside the tolerance (positive = pass with slack)
    message: str

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "margin": self.margin, "message": self.message}


def _outcome(name, margin, message=""):
    return CheckOutcome(name, bool(margin >= 0.0), float(margin), message)


def field_invariants(u_field: ScalarField, params: ModelParams, disc: DiscountSpec):
    """Bounds, monotonicity, convexity, Lipschitz and the reflecting-row
    condition on the solved stopping-value field (PDE-enforced columns)."""
    grid = u_field.grid
    delta = u_field.meta.get("delta", 0.01)
    cols = pde_columns(u_field)
    u = u_field.values[cols, :]
    z = grid.z
    lam = tail_rate(params)
    h0 = value_upper_bound(params, disc)
    out = []

    lower = 1.0 - 10.0 * delta
    out.append(_outcome("lower_bound", float(u.min() - lower),
                        f"min U = {u.min():.6f} vs 1 - 10*delta = {lower:.6f}"))
    out.append(_outcome("upper_bound", float(h0 - u.max()),
                        f"max U = {u.max():.6f} vs bound {h0:.6f}"))

    zdiff = np.diff(u, axis=1).max()
    out.append(_outcome("monotone_z", float(TOL_MONO - zdiff),
                        f"max forward z-difference = {zdiff:.3e} (tol {TOL_MONO:g})"))
    rdiff = np.diff(u, axis=0).max() if len(cols) > 1 else -np.inf
    out.append(_outcome("monotone_r", float(TOL_MONO - rdiff),
                        f"max forward r-difference = {rdiff:.3e} (tol {TOL_MONO:g})"))

    z2min = np.diff(u, n=2, axis=1).min()
    out.append(_outcome("convex_z", float(z2min + TOL_CONV),
                        f"min second z-difference = {z2min:.3e} (tol -{TOL_CONV:g})"))

    # U(z1) - U(z2) <= h0 (e^{-lam(z1-a)} - e^{-lam(z2-a)}) for all z1 < z2,
    # equivalent to U + h0 e^{-lam(z-a)} being nondecreasing along z
    psi = u - h0 * np.exp(-lam * (z[None, :] - params.alpha))
    lip = (np.maximum.accumulate(psi, axis=1)[:, :-1] - psi[:, 1:]).max()
    out.append(_outcome("lipschitz_z", float(TOL_LIP - lip),
                        f"max Lipschitz violation = {lip:.3e} (tol {TOL_LIP:g})"))

    h0z = z[1] - z[0]
    neu = np.abs((u[:, 1] - u[:, 0]) / h0z + lam * u[:, 0]).max()
    c_elastic = neu / h0z
    out.append(_outcome("elastic_row", float(50.0 - c_elastic),
                        f"one-sided U_z + lam U at the reflecting row: {neu:.4f} = {c_elastic:.2f}*h"))
    return out


def boundary_invariants(boundary: Boundary, params: ModelParams, disc: DiscountSpec,
                        grid_dz: float):
    """Shape facts: nonincreasing, above the reflecting level, below the
    constant-rate barrier when the discount has a positive floor, flat near
    the largest rates when the discount grows linearly."""
    out = []
    b = boundary.values
    inc = np.diff(b).max() if len(b) > 1 else -np.inf
    out.append(_outcome("boundary_nonincreasing", float(1e-12 - inc),
                        f"max forward difference = {inc:.3e}"))
    out.append(_outcome("boundary_above_alpha", float(b.min() - boundary.alpha),
                        f"min b = {b.min():.6f} vs alpha = {boundary.alpha}"))
    out.append(_outcome("boundary_isotonic_displacement",
                        float(2.0 * grid_dz - boundary.isotonic_displacement),
                        f"pre-projection displacement = {boundary.isotonic_displacement:.4f} "
                        f"vs 2 cells = {2*grid_dz:.4f}"))
    if disc.c1 > 0:
        zs = solve_constant_rate(params, disc.c1).z_star
        out.append(_outcome("boundary_below_constant_rate", float(zs - b.max()),
                            f"max b = {b.max():.4f} vs constant-rate barrier {zs:.4f}"))
    if disc.c2 > 0:
        gap = b[-1] - b.min()
        out.append(_outcome("boundary_flat_at_large_r", float(3.0 * grid_dz - gap),
                            f"b(r_max) - min b = {gap:.4f} vs 3 cells = {3*grid_dz:.4f}"))
    return out


def run_battery(params: ModelParams, disc: DiscountSpec,
                u_field: ScalarField, v_field: ScalarField, boundary: Boundary,
                mc_cfg: simulate.PathConfig, quick: bool = False):
    """Full verification battery over solved artifacts.

    quick=True trims the Monte Carlo path counts for smoke runs; the
    acceptance suite uses the pinned counts instead.
    """
    checks = []
    report = validate(params, disc)
    checks.append(_outcome("model_validation", 0.0 if report.passed else -1.0,
                           "; ".join(c.name for c in report.failures()) or "all model invariants hold"))

    checks.extend(field_invariants(u_field, params, disc))
    dz = float(np.diff(u_field.grid.z).max())
    checks.extend(boundary_invariants(boundary, params, disc, dz))

    rep = hjb_residual(u_field, v_field, boundary, params, disc)
    delta = u_field.meta.get("delta", 0.01)
    checks.append(_outcome("gradient_constraint", float(rep.gradient_min + 10.0 * delta),
                           f"min(V_z - 1) = {rep.gradient_min:.4f} vs -10*delta = {-10*delta:.4f}"))
    checks.append(_outcome("stopping_region_residual", float(0.1 - rep.stopping_residual),
                           f"|(L-rho)U + rho| = {rep.stopping_residual:.4f} two cells inside the floor"))
    checks.append(_outcome("value_supersolution", float(0.1 - rep.value_positive_part),
                           f"max((L-rho)V)+ = {rep.value_positive_part:.4f}"))

    n_mc = min(mc_cfg.n_paths, 20_000) if quick else mc_cfg.n_paths
    mc = simulate.PathConfig(dt=mc_cfg.dt, t_max=mc_cfg.t_max, n_paths=n_mc,
                             seed=mc_cfg.seed, bridge_max=mc_cfg.bridge_max)

    # Laplace-transform oracle at one interior lattice point
    means, ses = cir.mc_integrated_laplace(params, [1.0], [1.0], params.theta,
                                           n_mc, mc.dt, mc.seed)
    closed = cir.laplace_integrated_cir(params, 1.0, 1.0, params.theta)
    dev = abs(means[0, 0] - closed)
    checks.append(_outcome("laplace_transform_mc", float(3.0 * ses[0, 0] - dev),
                           f"MC {means[0,0]:.6f} vs closed form {closed:.6f} (se {ses[0,0]:.2e})"))

    # PDE vs MC at a mid-domain point
    r0 = float(np.median(boundary.r))
    z0 = min(params.alpha + 0.5, 0.5 * (u_field.grid.z[0] + u_field.grid.z[-1]))
    est_u = simulate.run_stopping_value(params, disc, boundary, z0, r0, mc)
    pde_u = u_field.interp(r0, z0)
    dev_u = abs(est_u.mean - pde_u)
    checks.append(_outcome("stopping_value_mc_vs_pde",
                           float(3.0 * est_u.std_error + 0.03 - dev_u),
                           f"MC {est_u.mean:.4f} (se {est_u.std_error:.4f}) vs PDE {pde_u:.4f} at ({r0:.3g},{z0:.3g})"))
    est_v = simulate.run_dividend_policy(params, disc, boundary, z0, r0, mc)
    pde_v = v_field.interp(r0, z0)
    dev_v = abs(est_v.mean - pde_v)
    checks.append(_outcome("dividend_value_mc_vs_pde",
                           float(3.0 * est_v.std_error + 0.03 - dev_v),
                           f"MC {est_v.mean:.4f} (se {est_v.std_error:.4f}) vs PDE {pde_v:.4f} at ({r0:.3g},{z0:.3g})"))

    # no shifted barrier may beat the solved one beyond paired noise
    rows = simulate.suboptimality_sweep(params, disc, boundary, z0, r0,
                                        [-0.3, -0.1, 0.1, 0.3], mc)
    worst = max(r.diff_mean - 3.0 * r.diff_se for r in rows[1:])
    checks.append(_outcome("suboptimality_sweep", float(-worst),
                           f"best shifted-barrier gain = {max(r.diff_mean for r in rows[1:]):.5f} "
                           f"(3se band {3*max(r.diff_se for r in rows[1:]):.5f})"))

    # determinism: bitwise identical rerun
    re1 = simulate.run_dividend_policy(params, disc, boundary, z0, r0,
                                       simulate.PathConfig(dt=mc.dt, t_max=5.0, n_paths=500, seed=mc.seed))
    re2 = simulate.run_dividend_policy(params, disc, boundary, z0, r0,
                                       simulate.PathConfig(dt=mc.dt, t_max=5.0, n_paths=500, seed=mc.seed))
    checks.append(_outcome("determinism_bitwise", 0.0 if re1 == re2 else -1.0,
                           "rerun with identical seed/config is bitwise identical"))
    return checks
