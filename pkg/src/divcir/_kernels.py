"""Numba path kernels with counter-based random streams.

Every variate is a pure function of (seed, path index, step index, channel),
so a path is fully determined by (seed, path index): results are bitwise
identical regardless of worker count, variant count, or early termination of
other paths.  The channel tags keep the surplus driver (B), the rate driver
(W) and the bridge uniform independent, as the model requires.

Uniforms come from a SplitMix64-style avalanche; normals via the Acklam
rational approximation of the inverse normal CDF (max relative error about
1.1e-9, irrelevant at Monte Carlo accuracy).  The rate uses full-truncation
Euler micro-steps (exact transition sampling lives in divcir.cir and is used
where steps are coarse); the cumulative discount integral is trapezoidal.

The within-step bridge maximum is sampled lazily: when the crossing level is
so far from both endpoints that the bridge-max law cannot produce any
representable uniform below exp(-2*g/var) (g > 19*var), the draw is skipped.
Because draws are counter-indexed, skipping consumes nothing and cannot
shift any other variate.

Boundaries enter as uniform-grid lookup tables (exact for boundaries
extracted on uniform rate grids), keeping the per-step cost flat.
"""

from __future__ import annotations

import numpy as np
import numba as nb
from numba import njit

nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

U64 = np.uint64
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_GOLD = U64(0x9E3779B97F4A7C15)

CH_B = 0  # surplus driver normal
CH_W = 1  # rate driver normal
CH_BRIDGE = 2  # within-step bridge-max uniform
CH_RUIN = 3  # within-step bridge-min uniform (ruin detection)

MAX_PATHS = 1 << 24
MAX_STEPS = 1 << 32

# stop accruing dividends once the discount exp(-I) is below exp(-30); the
# omitted tail is < 1e-11 in absolute value for the horizons used here
DISCOUNT_LOG_CAP = 30.0

# exp(-2g/var) < 2^-54 for g > 19*var: the bridge max cannot cross, for any
# representable uniform
_BRIDGE_CUT = 19.0


@njit(nb.uint64(nb.uint64), inline="always", cache=True)
def _mix(x):
    x = (x ^ (x >> U64(30))) * _M1
    x = (x ^ (x >> U64(27))) * _M2
    return x ^ (x >> U64(31))


@njit(nb.float64(nb.uint64, nb.uint64, nb.uint64, nb.uint64), inline="always", cache=True)
def _uniform(seed, path, step, ch):
    c = (path << U64(40)) ^ (step << U64(8)) ^ ch
    return (float(_mix(seed ^ _mix(c ^ _GOLD)) >> U64(11)) + 0.5) * 1.1102230246251565e-16


@njit(nb.float64(nb.float64), inline="always", cache=True, fastmath=True)
def _ndtri(u):
    if u < 0.02425:
        q = np.sqrt(-2.0 * np.log(u))
        return (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00) * q
                  - 2.549732539343734e+00) * q + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
               ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q + 2.445134137142996e+00) * q
                 + 3.754408661907416e+00) * q + 1.0)
    if u > 0.97575:
        q = np.sqrt(-2.0 * np.log(1.0 - u))
        return -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00) * q
                   - 2.549732539343734e+00) * q + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
               ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q + 2.445134137142996e+00) * q
                 + 3.754408661907416e+00) * q + 1.0)
    q = u - 0.5
    t = q * q
    return (((((-3.969683028665376e+01 * t + 2.209460984245205e+02) * t - 2.759285104469687e+02) * t
              + 1.383577518672690e+02) * t - 3.066479806614716e+01) * t + 2.506628277459239e+00) * q / \
           (((((-5.447609879822406e+01 * t + 1.615858368580409e+02) * t - 1.556989798598866e+02) * t
              + 6.680131188771972e+01) * t - 1.328068155288572e+01) * t + 1.0)


@njit(nb.float64(nb.uint64, nb.uint64, nb.uint64, nb.uint64), inline="always", cache=True, fastmath=True)
def _normal(seed, path, step, ch):
    return _ndtri(_uniform(seed, path, step, ch))


@njit(nb.float64(nb.int64, nb.float64, nb.float64[:], nb.float64[:], nb.float64), inline="always", cache=True)
def _rho_eval(kind, param, xs, ys, r):
    if kind == 0:
        return param
    if kind == 1:
        return param + r
    if kind == 2:
        return np.sqrt(param + r)
    # tabulated: linear interpolation, constant extrapolation
    n = xs.shape[0]
    if r <= xs[0]:
        return ys[0]
    if r >= xs[n - 1]:
        return ys[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= r:
            lo = mid
        else:
            hi = mid
    w = (r - xs[lo]) / (xs[lo + 1] - xs[lo])
    return ys[lo] + w * (ys[lo + 1] - ys[lo])


@njit(nb.float64(nb.float64, nb.float64, nb.float64[:], nb.float64), inline="always", cache=True, fastmath=True)
def _lookup(x0, inv_h, ys, r):
    """Piecewise-linear lookup on a uniform abscissa grid, constant beyond
    the ends; tolerates infinite plateau values."""
    t = (r - x0) * inv_h
    if t <= 0.0:
        return ys[0]
    n = ys.shape[0]
    if t >= n - 1:
        return ys[n - 1]
    j = int(t)
    y0 = ys[j]
    y1 = ys[j + 1]
    if y0 == y1:
        return y0
    return y0 + (t - j) * (y1 - y0)


@njit(nb.float64(nb.float64, nb.float64, nb.float64, nb.float64), inline="always", cache=True, fastmath=True)
def _bridge_max(y0, y1, var, u):
    """Max of a Brownian bridge over one step given endpoints (the conditional
    law is drift-free), inverted from a uniform."""
    d = y1 - y0
    return 0.5 * (y0 + y1 + np.sqrt(d * d - 2.0 * var * np.log(u)))


@njit(cache=True, parallel=True, fastmath=True)
def dividend_policy_kernel(seed, n_paths, n_steps, dt, mu, sigma, alpha,
                           k, theta, gamma, r0, z0,
                           rho_kind, rho_param, rho_xs, rho_ys,
                           b_x0, b_inv_h, b_v, shifts, b_lo, b_hi,
                           use_bridge, out_pay, out_status):
    """Barrier dividend strategies with common random numbers.

    Variant m uses the barrier clip(b(r) + shifts[m], b_lo, b_hi).  Per path:
    simulate (R, Z0) on the dt grid; cumulative dividends are the running max
    of (Z0 - barrier)+ including the time-0 lump; each increment is
    discounted at the left-endpoint integrated rate; a variant ends at ruin
    (Z0 - D <= alpha), at the discount cap, or at t_max.

    When the bridge correction is on, both within-step extremes of the
    uncontrolled surplus are sampled from the bridge law: the maximum sizes
    the payout increments, and the minimum detects first passage below the
    ruin level between grid points (otherwise ruin detection is first-order
    biased upward).

    out_pay:    (n_variants, n_paths) discounted payouts
    out_status: (n_variants, n_paths) 0 = ruined, 1 = hit t_max, 2 = discount cap
    """
    n_var = shifts.shape[0]
    sqdt = np.sqrt(dt)
    var_step = sigma * sigma * dt
    s = _mix(seed ^ _GOLD)
    for p in nb.prange(n_paths):
        pp = U64(p)
        r = r0
        z = z0
        rho_here = _rho_eval(rho_kind, rho_param, rho_xs, rho_ys, r)
        cum = 0.0  # integral of rho(R) up to the current grid time
        b0 = _lookup(b_x0, b_inv_h, b_v, r0)
        D = np.empty(n_var)
        pay = np.empty(n_var)
        alive = np.zeros(n_var, dtype=np.uint8)
        n_alive = 0
        for m in range(n_var):
            bm = min(max(b0 + shifts[m], b_lo), b_hi)
            lump = max(z0 - bm, 0.0)
            D[m] = lump
            pay[m] = lump
            if z0 - lump > alpha:
                alive[m] = 1
                n_alive += 1
            else:
                out_status[m, p] = 0
        n = U64(0)
        for i in range(n_steps):
            if n_alive == 0:
                break
            xb = _normal(s, pp, n, U64(CH_B))
            xw = _normal(s, pp, n, U64(CH_W))
            rp = max(r, 0.0)
            r_new = r + k * (theta - rp) * dt + gamma * np.sqrt(rp) * sqdt * xw
            z_new = z + mu * dt + sigma * sqdt * xb
            rho_new = _rho_eval(rho_kind, rho_param, rho_xs, rho_ys, max(r_new, 0.0))
            disc_log = -cum  # discount at the left endpoint of the step
            cum += 0.5 * (rho_here + rho_new) * dt
            b_here = _lookup(b_x0, b_inv_h, b_v, max(r_new, 0.0))
            mx = max(z, z_new)
            mn = min(z, z_new)
            have_min = False
            if use_bridge:
                # shared lazy draws keyed on the closest alive levels; the
                # cut makes skipped draws unreachable for any uniform
                lvl_min = np.inf
                ruin_max = -np.inf
                for m in range(n_var):
                    if alive[m]:
                        lvl = min(max(b_here + shifts[m], b_lo), b_hi) + D[m]
                        if lvl < lvl_min:
                            lvl_min = lvl
                        if alpha + D[m] > ruin_max:
                            ruin_max = alpha + D[m]
                if np.isfinite(lvl_min) and (lvl_min - z) * (lvl_min - z_new) < _BRIDGE_CUT * var_step:
                    u = _uniform(s, pp, n, U64(CH_BRIDGE))
                    mb = _bridge_max(z, z_new, var_step, u)
                    if mb > mx:
                        mx = mb
                if (z - ruin_max) * (z_new - ruin_max) < _BRIDGE_CUT * var_step:
                    u = _uniform(s, pp, n, U64(CH_RUIN))
                    d = z_new - z
                    mnb = 0.5 * (z + z_new - np.sqrt(d * d - 2.0 * var_step * np.log(u)))
                    if mnb < mn:
                        mn = mnb
                    have_min = True
            for m in range(n_var):
                if not alive[m]:
                    continue
                # the dip below the ruin level precedes any payout at the
                # step's peak in every non-negligible scenario
                if (have_min and mn <= alpha + D[m]) or z_new - D[m] <= alpha:
                    alive[m] = 0
                    out_status[m, p] = 0
                    n_alive -= 1
                    continue
                bm = min(max(b_here + shifts[m], b_lo), b_hi)
                exc = mx - bm - D[m]
                if exc > 0.0:
                    pay[m] += np.exp(disc_log) * exc
                    D[m] += exc
                if z_new - D[m] <= alpha:
                    alive[m] = 0
                    out_status[m, p] = 0
                    n_alive -= 1
                elif cum > DISCOUNT_LOG_CAP:
                    alive[m] = 0
                    out_status[m, p] = 2
                    n_alive -= 1
            r = r_new
            z = z_new
            rho_here = rho_new
            n += U64(1)
        for m in range(n_var):
            if alive[m]:
                out_status[m, p] = 1  # truncated at t_max
            out_pay[m, p] = pay[m]


@njit(cache=True, parallel=True, fastmath=True)
def stopping_value_kernel(seed, n_paths, n_steps, dt, mu, sigma, alpha,
                          k, theta, gamma, lam, nu, r0, z0,
                          rho_kind, rho_param, rho_xs, rho_ys,
                          b_x0, b_inv_h, b_v, use_bridge,
                          out_val, out_uz, out_status):
    """First hitting of the reflected level to the moving threshold b(R),
    sampled under an exact drift tilt.

    The driver is simulated with drift nu - mu (tilt nu >= 0; nu = 0 is the
    physical measure) and the Girsanov likelihood ratio is folded into the
    payoff, which leaves the estimand unchanged:

        value payoff    exp(lam*((z0-alpha) max S - (z0-alpha))
                            - (nu/sigma^2)*Y_tau
                            - nu*(2*mu-nu)/(2*sigma^2)*tau - I_tau)
        gradient payoff -lam * 1{S > z0-alpha} * exp(lam*(S - (z0-alpha))
                            - same tilt and discount terms)

    The reflected level is K_t = (z0-alpha) max S_t - Y_t + alpha with S the
    running max of the simulated driver Y.  Paths that never hit settle at
    the horizon with the accrued gain (status 1).
    """
    sqdt = np.sqrt(dt)
    var_step = sigma * sigma * dt
    s = _mix(seed ^ _GOLD)
    w0 = z0 - alpha
    drift = nu - mu
    tilt_y = nu / (sigma * sigma)
    tilt_t = nu * (2.0 * mu - nu) / (2.0 * sigma * sigma)
    for p in nb.prange(n_paths):
        pp = U64(p)
        r = r0
        y = 0.0
        smax = 0.0
        rho_here = _rho_eval(rho_kind, rho_param, rho_xs, rho_ys, r)
        cum = 0.0
        stopped = False
        immediate = False
        if max(w0, smax) - y + alpha >= _lookup(b_x0, b_inv_h, b_v, r0):
            out_val[p] = 1.0
            out_uz[p] = 0.0
            out_status[p] = 0
            stopped = True
            immediate = True
        n = U64(0)
        t = 0.0
        for i in range(n_steps):
            if stopped:
                break
            xb = _normal(s, pp, n, U64(CH_B))
            xw = _normal(s, pp, n, U64(CH_W))
            rp = max(r, 0.0)
            r_new = r + k * (theta - rp) * dt + gamma * np.sqrt(rp) * sqdt * xw
            y_new = y + drift * dt + sigma * sqdt * xb
            if use_bridge:
                # exact within-step max of the driver keeps S exact in law
                if (smax - y) * (smax - y_new) < _BRIDGE_CUT * var_step:
                    u = _uniform(s, pp, n, U64(CH_BRIDGE))
                    mb = _bridge_max(y, y_new, var_step, u)
                    if mb > smax:
                        smax = mb
            elif y_new > smax:
                smax = y_new
            rho_new = _rho_eval(rho_kind, rho_param, rho_xs, rho_ys, max(r_new, 0.0))
            cum += 0.5 * (rho_here + rho_new) * dt
            r = r_new
            y = y_new
            rho_here = rho_new
            n += U64(1)
            t += dt
            if max(w0, smax) - y + alpha >= _lookup(b_x0, b_inv_h, b_v, max(r, 0.0)):
                stopped = True
        if not immediate:
            weight = -tilt_y * y - tilt_t * t - cum
            out_val[p] = np.exp(lam * (max(w0, smax) - w0) + weight)
            out_uz[p] = -lam * np.exp(lam * (smax - w0) + weight) if smax > w0 else 0.0
            out_status[p] = 0 if stopped else 1


@njit(cache=True, parallel=True, fastmath=True)
def running_max_kernel(seed, n_paths, n_steps, dt, mu, sigma, use_bridge, out_s):
    """Running max at the horizon of the driver Y = -mu t + sigma B
    (exact in law when use_bridge)."""
    sqdt = np.sqrt(dt)
    var_step = sigma * sigma * dt
    s = _mix(seed ^ _GOLD)
    for p in nb.prange(n_paths):
        pp = U64(p)
        y = 0.0
        smax = 0.0
        n = U64(0)
        for i in range(n_steps):
            xb = _normal(s, pp, n, U64(CH_B))
            y_new = y - mu * dt + sigma * sqdt * xb
            if use_bridge:
                if (smax - y) * (smax - y_new) < _BRIDGE_CUT * var_step:
                    u = _uniform(s, pp, n, U64(CH_BRIDGE))
                    mb = _bridge_max(y, y_new, var_step, u)
                    if mb > smax:
                        smax = mb
            elif y_new > smax:
                smax = y_new
            y = y_new
            n += U64(1)
        out_s[p] = smax


@njit(cache=True, parallel=True, fastmath=True)
def integrated_rate_kernel(seed, n_paths, n_steps, dt, k, theta, gamma, r0,
                           record_steps, out_cum):
    """Cumulative trapezoidal integral of the raw CIR rate, recorded at the
    given (sorted) step counts; full-truncation Euler micro-steps.

    out_cum: (n_records, n_paths)
    """
    sqdt = np.sqrt(dt)
    s = _mix(seed ^ _GOLD)
    n_rec = record_steps.shape[0]
    for p in nb.prange(n_paths):
        pp = U64(p)
        r = r0
        cum = 0.0
        rec = 0
        n = U64(0)
        for i in range(n_steps):
            while rec < n_rec and i == record_steps[rec]:
                out_cum[rec, p] = cum
                rec += 1
            xw = _normal(s, pp, n, U64(CH_W))
            rp = max(r, 0.0)
            r_new = r + k * (theta - rp) * dt + gamma * np.sqrt(rp) * sqdt * xw
            cum += 0.5 * (rp + max(r_new, 0.0)) * dt
            r = r_new
            n += U64(1)
        while rec < n_rec and record_steps[rec] == n_steps:
            out_cum[rec, p] = cum
            rec += 1


@njit(cache=True)
def trace_kernel(seed, path_index, n_steps, dt, mu, sigma, alpha,
                 k, theta, gamma, r0, z0,
                 rho_kind, rho_param, rho_xs, rho_ys,
                 b_x0, b_inv_h, b_v, b_lo, b_hi, out):
    """Single-path trajectory of the dividend policy run, on the step grid.

    Row layout: t, R, Z0 (uncontrolled surplus), K (reflected level),
    S (running max of the driver), D (cumulative dividends), I (cumulative
    integrated discount rate).  Stops one row after ruin; returns the row
    count.  Consumes the same draws as the estimate kernels for the same
    (seed, path_index).
    """
    sqdt = np.sqrt(dt)
    s = _mix(seed ^ _GOLD)
    pp = U64(path_index)
    r = r0
    z = z0
    y = 0.0
    smax = 0.0
    rho_here = _rho_eval(rho_kind, rho_param, rho_xs, rho_ys, r)
    cum = 0.0
    b0 = min(max(_lookup(b_x0, b_inv_h, b_v, r0), b_lo), b_hi)
    D = max(z0 - b0, 0.0)
    w0 = z0 - alpha
    out[0, 0] = 0.0
    out[0, 1] = r
    out[0, 2] = z
    out[0, 3] = max(w0, smax) - y + alpha
    out[0, 4] = smax
    out[0, 5] = D
    out[0, 6] = cum
    rows = 1
    if z0 - D <= alpha:
        return rows
    n = U64(0)
    for i in range(n_steps - 1):
        xb = _normal(s, pp, n, U64(CH_B))
        xw = _normal(s, pp, n, U64(CH_W))
        rp = max(r, 0.0)
        r = r + k * (theta - rp) * dt + gamma * np.sqrt(rp) * sqdt * xw
        z = z + mu * dt + sigma * sqdt * xb
        y = y - mu * dt + sigma * sqdt * xb
        if y > smax:
            smax = y
        rho_new = _rho_eval(rho_kind, rho_param, rho_xs, rho_ys, max(r, 0.0))
        cum += 0.5 * (rho_here + rho_new) * dt
        rho_here = rho_new
        bm = min(max(_lookup(b_x0, b_inv_h, b_v, max(r, 0.0)), b_lo), b_hi)
        exc = z - bm - D
        if exc > 0.0:
            D += exc
        n += U64(1)
        out[rows, 0] = dt * float(n)
        out[rows, 1] = r
        out[rows, 2] = z
        out[rows, 3] = max(w0, smax) - y + alpha
        out[rows, 4] = smax
        out[rows, 5] = D
        out[rows, 6] = cum
        rows += 1
        if z - D <= alpha:
            break
    return rows
