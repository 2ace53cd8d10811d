"""Model inputs: surplus/CIR coefficients and the discount-rate specification.

The surplus is an arithmetic Brownian motion with drift mu and volatility
sigma, controlled by cumulative dividend withdrawals and absorbed at the
solvency level alpha.  The short rate follows a CIR diffusion
dR = k(theta - R)dt + gamma*sqrt(R)dW, and cash flows are discounted at
rho(R_t) for a nondecreasing, nonnegative rate function rho bounded below
by c1 + c2*r with c1 + c2 > 0.

Everything here is immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParams",
    "DiscountSpec",
    "CheckResult",
    "ValidationReport",
    "ConfigError",
    "validate",
    "tail_rate",
    "value_upper_bound",
    "params_from_dict",
    "discount_from_dict",
    "load_model_document",
]

DISCOUNT_KINDS = ("constant", "linear_shift", "sqrt_shift", "tabulated")


class ConfigError(ValueError):
    """Invalid or unknown configuration input (CLI exit code 2)."""


@dataclass(frozen=True)
class ModelParams:
    """Surplus and CIR coefficients.

    mu      surplus drift per unit time (mu > 0 for the solver path;
            mu <= 0 is handled by the immediate-liquidation formula only)
    sigma   surplus volatility, > 0
    alpha   solvency level, >= 0
    k       CIR mean-reversion speed, > 0
    theta   CIR long-run mean, > 0
    gamma   CIR volatility, > 0
    """

    mu: float
    sigma: float
    alpha: float
    k: float
    theta: float
    gamma: float

    @property
    def feller_ok(self) -> bool:
        """2*k*theta >= gamma**2, keeping the rate strictly positive."""
        return 2.0 * self.k * self.theta >= self.gamma**2


def tail_rate(params: ModelParams) -> float:
    """2*mu/sigma**2: exponential tail rate of the driver's all-time running
    maximum, and the coefficient in the elastic boundary condition.

    Raises ValueError for mu <= 0 (no finite running-max law; the solver
    path requires positive drift).
    """
    if params.mu <= 0.0:
        raise ValueError("tail_rate requires mu > 0 (immediate liquidation is optimal for mu <= 0)")
    return 2.0 * params.mu / params.sigma**2


@dataclass(frozen=True)
class DiscountSpec:
    """Discount-rate function rho and its lower-bound metadata.

    kind is one of:
      constant     rho(r) = rho0            (param = rho0)
      linear_shift rho(r) = r0 + r          (param = r0)
      sqrt_shift   rho(r) = sqrt(r0 + r)    (param = r0)
      tabulated    piecewise-linear through samples, constant beyond the ends

    c1, c2 are the lower-bound constants in rho(r) >= c1 + c2*r; they are
    auto-derived for the built-in kinds and may be overridden.  c3 and q are
    growth metadata used only in validation messages.
    """

    kind: str
    param: float = 0.0
    samples: tuple = ()
    c1: float = None
    c2: float = None
    c3: float = 1.0
    q: int = 0

    def __post_init__(self):
        if self.kind not in DISCOUNT_KINDS:
            raise ConfigError(f"unknown discount kind {self.kind!r}; expected one of {DISCOUNT_KINDS}")
        if self.kind == "tabulated":
            samples = tuple((float(r), float(v)) for r, v in self.samples)
            if len(samples) < 2:
                raise ConfigError("tabulated discount needs at least 2 samples")
            rs = [r for r, _ in samples]
            if any(b <= a for a, b in zip(rs, rs[1:])):
                raise ConfigError("tabulated discount sample abscissae must be strictly increasing")
            object.__setattr__(self, "samples", samples)
        c1, c2 = self.c1, self.c2
        if c1 is None:
            c1 = {
                "constant": self.param,
                "linear_shift": self.param,
                "sqrt_shift": math.sqrt(max(self.param, 0.0)),
                "tabulated": self.samples[0][1] if self.samples else 0.0,
            }[self.kind]
        if c2 is None:
            c2 = 1.0 if self.kind == "linear_shift" else 0.0
        object.__setattr__(self, "c1", float(c1))
        object.__setattr__(self, "c2", float(c2))

    def rho(self, r):
        """Evaluate the discount rate; accepts scalars or arrays."""
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            out = np.full_like(r, self.param)
        elif self.kind == "linear_shift":
            out = self.param + r
        elif self.kind == "sqrt_shift":
            out = np.sqrt(self.param + r)
        else:
            xs = np.array([s[0] for s in self.samples])
            ys = np.array([s[1] for s in self.samples])
            out = np.interp(r, xs, ys)
        return out if out.ndim else float(out)

    def kernel_args(self):
        """(kind_code, param, xs, ys) consumed by the numba path kernels."""
        code = DISCOUNT_KINDS.index(self.kind)
        if self.kind == "tabulated":
            xs = np.array([s[0] for s in self.samples], dtype=float)
            ys = np.array([s[1] for s in self.samples], dtype=float)
        else:
            xs = np.zeros(2)
            ys = np.zeros(2)
        return code, float(self.param), xs, ys


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    message: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "checks": [{"name": c.name, "passed": c.passed, "message": c.message} for c in self.checks],
        }


def validate(params: ModelParams, disc: DiscountSpec) -> ValidationReport:
    """Check every model invariant; pure function of its inputs.

    The report lists each invariant with a pass flag; the overall report
    passes iff every check passes.  Nothing raises here: failures are data.
    """
    checks = []

    def add(name, ok, msg):
        checks.append(CheckResult(name, bool(ok), msg))

    add("sigma_positive", params.sigma > 0, f"sigma = {params.sigma}")
    add("gamma_positive", params.gamma > 0, f"gamma = {params.gamma}")
    add("k_positive", params.k > 0, f"k = {params.k}")
    add("theta_positive", params.theta > 0, f"theta = {params.theta}")
    add("alpha_nonnegative", params.alpha >= 0, f"alpha = {params.alpha}")
    feller_lhs, feller_rhs = 2.0 * params.k * params.theta, params.gamma**2
    add(
        "feller",
        feller_lhs >= feller_rhs,
        f"2*k*theta = {feller_lhs:.6g} vs gamma^2 = {feller_rhs:.6g}",
    )
    add(
        "drift_positive",
        params.mu > 0,
        f"mu = {params.mu}"
        + ("" if params.mu > 0 else " (solver path unavailable; value is z - alpha, paid at once)"),
    )
    add(
        "discount_lower_bound",
        disc.c1 + disc.c2 > 0,
        f"c1 + c2 = {disc.c1 + disc.c2:.6g} (c1 = {disc.c1:.6g}, c2 = {disc.c2:.6g}, "
        f"growth metadata c3 = {disc.c3:.6g}, q = {disc.q})",
    )
    # monotone and nonnegative, sampled; exact for tabulated samples
    if disc.kind == "tabulated":
        ys = np.array([s[1] for s in disc.samples])
        mono = bool(np.all(np.diff(ys) >= 0.0))
        nonneg = bool(np.all(ys >= 0.0))
        msg = f"{len(ys)} samples"
    else:
        rs = np.sort(np.random.default_rng(0).uniform(0.0, 10.0, 1000))
        vals = disc.rho(rs)
        mono = bool(np.all(np.diff(vals) >= -1e-15))
        nonneg = bool(np.all(vals >= 0.0))
        msg = "sampled on 1000 points of [0, 10]"
    add("discount_nondecreasing", mono, msg)
    add("discount_nonnegative", nonneg, msg)
    return ValidationReport(tuple(checks))


def value_upper_bound(params: ModelParams, disc: DiscountSpec) -> float:
    """Finite upper bound for the auxiliary stopping value.

    With c1 > 0 the running-max tail law gives the closed form
    2*p*mu/(c1*sigma) with p = mu/sigma + c1*sigma/(2*mu).  With c1 = 0 and
    c2 > 0 the bound is 1 plus the quadrature of
    exp(-A_{c2}(t)) * (2*mu^2/sigma^2 + 3*mu/(sigma*sqrt(t))) over (0, inf),
    where A is the log-Laplace coefficient of the integrated rate.
    Always >= 1 (stopping immediately pays 1).
    """
    from . import cir  # deferred: cir imports ModelParams from here

    if disc.c1 + disc.c2 <= 0:
        raise ValueError("needs c1 + c2 > 0")
    mu, sigma = params.mu, params.sigma
    if mu <= 0:
        raise ValueError("needs mu > 0")
    if disc.c1 > 0:
        p = mu / sigma + disc.c1 * sigma / (2.0 * mu)
        return 2.0 * p * mu / (disc.c1 * sigma)
    coeff = cir.laplace_coefficients(params, disc.c2)
    from scipy.integrate import quad

    def integrand(t):
        return math.exp(-coeff.A(t)) * (2.0 * mu**2 / sigma**2 + 3.0 * mu / (sigma * math.sqrt(t)))

    # substitute t = s^2 on (0, 1] to absorb the 1/sqrt(t) endpoint singularity
    head, head_err = quad(lambda s: integrand(s * s) * 2.0 * s, 0.0, 1.0, limit=200)
    tail, tail_err = quad(integrand, 1.0, np.inf, limit=200)
    if not (math.isfinite(head) and math.isfinite(tail)) or head_err + tail_err > 1e-6 * (abs(head) + abs(tail) + 1.0):
        raise ArithmeticError(
            f"quadrature for the value bound did not converge: head={head}+-{head_err}, tail={tail}+-{tail_err}"
        )
    return 1.0 + head + tail


# -- configuration documents -------------------------------------------------

_PARAM_KEYS = ("mu", "sigma", "alpha", "k", "theta", "gamma")


def discount_from_dict(doc: dict) -> DiscountSpec:
    if not isinstance(doc, dict):
        raise ConfigError("discount must be a JSON object")
    allowed = {"kind", "rho0", "r0", "samples", "c1", "c2", "c3", "q"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown discount keys: {sorted(unknown)}")
    if "kind" not in doc:
        raise ConfigError("discount requires a 'kind' key")
    kind = doc["kind"]
    kwargs = {}
    if kind == "constant":
        if "rho0" not in doc:
            raise ConfigError("constant discount requires 'rho0'")
        kwargs["param"] = float(doc["rho0"])
    elif kind in ("linear_shift", "sqrt_shift"):
        if "r0" not in doc:
            raise ConfigError(f"{kind} discount requires 'r0'")
        kwargs["param"] = float(doc["r0"])
    elif kind == "tabulated":
        if "samples" not in doc:
            raise ConfigError("tabulated discount requires 'samples'")
        kwargs["samples"] = tuple((float(r), float(v)) for r, v in doc["samples"])
    for key in ("c1", "c2", "c3"):
        if key in doc:
            kwargs[key] = float(doc[key])
    if "q" in doc:
        kwargs["q"] = int(doc["q"])
    return DiscountSpec(kind=kind, **kwargs)


def params_from_dict(doc: dict) -> ModelParams:
    if not isinstance(doc, dict):
        raise ConfigError("model parameters must be a JSON object")
    unknown = set(doc) - set(_PARAM_KEYS)
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    missing = [k for k in _PARAM_KEYS if k not in doc]
    if missing:
        raise ConfigError(f"missing model keys: {missing}")
    return ModelParams(**{k: float(doc[k]) for k in _PARAM_KEYS})


def load_model_document(doc) -> tuple:
    """Parse the combined UTF-8 JSON document
    {mu, sigma, alpha, k, theta, gamma, discount:{...}}; unknown keys rejected.
    """
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    if not isinstance(doc, dict):
        raise ConfigError("model document must be a JSON object")
    unknown = set(doc) - set(_PARAM_KEYS) - {"discount"}
    if unknown:
        raise ConfigError(f"unknown keys in model document: {sorted(unknown)}")
    if "discount" not in doc:
        raise ConfigError("model document requires a 'discount' object")
    params = params_from_dict({k: v for k, v in doc.items() if k in _PARAM_KEYS})
    disc = discount_from_dict(doc["discount"])
    return params, disc
