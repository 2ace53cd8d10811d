"""Command-line interface: configuration ingestion, solve/verify/simulate
orchestration, and plot-ready artifact emission.

Exit codes: 0 success, 2 configuration or validation failure, 3 numerical
failure, 4 verification failure.  All floats are serialized with 17
significant digits; reruns with an identical config are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, battery, constant_rate, plots, simulate
from .free_boundary import (
    Boundary,
    Grid2D,
    ScalarField,
    SolverConfig,
    SolverError,
    extract_boundary,
    hjb_residual,
    integrate_value,
    solve_penalized,
)
from .model import (
    ConfigError,
    DiscountSpec,
    ModelParams,
    discount_from_dict,
    params_from_dict,
    validate,
)

_GRID_KEYS = {"r_min": 0.005, "r_max": 1.1, "n_r": 256, "z_max": 2.5, "n_z": 256}
_MC_KEYS = {"dt": 1e-3, "t_max": 200.0, "n_paths": 100_000, "seed": 20240, "bridge_max": True}
_SOLVER_KEYS = {
    "delta": 0.01, "max_outer_iters": 60, "tol_outer": 1e-8, "upwind": True,
    "linear_solver_tol": 0.0, "damping": 1.0, "rmin_bc": "noflux",
    "rmax_bc": "noflux", "zmax_data": "consistent",
}
_TOP_KEYS = ("model", "discount", "solver", "grid", "mc", "outputs")


def _merge_section(doc, name, defaults):
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(section)
    return merged


class RunConfig:
    """Validated run configuration; every sub-document passes its module
    validator before any computation starts."""

    def __init__(self, doc: dict):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(_TOP_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        if "model" not in doc:
            raise ConfigError("config requires a 'model' section")
        if "discount" not in doc:
            raise ConfigError("config requires a 'discount' section")
        self.params = params_from_dict(doc["model"])
        self.disc = discount_from_dict(doc["discount"])
        self.grid_doc = _merge_section(doc, "grid", _GRID_KEYS)
        self.mc_doc = _merge_section(doc, "mc", _MC_KEYS)
        self.solver_doc = _merge_section(doc, "solver", _SOLVER_KEYS)
        self.outputs = doc.get("outputs", "out")
        report = validate(self.params, self.disc)
        if not report.passed:
            names = ", ".join(c.name for c in report.failures())
            raise ConfigError(f"model validation failed: {names}")
        self.resolved = {
            "model": {k: getattr(self.params, k) for k in ("mu", "sigma", "alpha", "k", "theta", "gamma")},
            "discount": doc["discount"],
            "solver": self.solver_doc,
            "grid": self.grid_doc,
            "mc": self.mc_doc,
            "outputs": self.outputs,
        }

    def grid(self) -> Grid2D:
        g = self.grid_doc
        return Grid2D.uniform(r_min=g["r_min"], r_max=g["r_max"], n_r=int(g["n_r"]),
                              alpha=self.params.alpha, z_max=g["z_max"], n_z=int(g["n_z"]))

    def solver(self) -> SolverConfig:
        return SolverConfig(**self.solver_doc)

    def mc(self) -> simulate.PathConfig:
        m = dict(self.mc_doc)
        m["n_paths"] = int(m["n_paths"])
        m["seed"] = int(m["seed"])
        m["bridge_max"] = bool(m["bridge_max"])
        return simulate.PathConfig(**m)


def _apply_overrides(doc, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects dot.path=value, got {item!r}")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {path!r} crosses a non-object")
        node[keys[-1]] = value
    return doc


def _load_config(args) -> RunConfig:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc = _apply_overrides(doc, getattr(args, "set", None))
    cfg = RunConfig(doc)
    if getattr(args, "out", None):
        cfg.outputs = args.out
        cfg.resolved["outputs"] = args.out
    return cfg


def _config_hash(resolved) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(outdir: Path, cfg: RunConfig, command, artifacts):
    _write_json(outdir / "manifest.json", {
        "command": command,
        "config": cfg.resolved,
        "config_sha256": _config_hash(cfg.resolved),
        "package_version": __version__,
        "artifacts": sorted(artifacts),
    })


def _load_field_csv(path, meta=None) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    r = np.unique(data[:, 0])
    z = np.unique(data[:, 1])
    vals = data[:, 2].reshape(len(r), len(z))
    return ScalarField(Grid2D(r, z), vals, meta or {})


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    outdir = Path(cfg.outputs)
    outdir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    u_field = solve_penalized(cfg.solver(), grid, cfg.params, cfg.disc)
    boundary = extract_boundary(u_field, cfg.params, cfg.disc)
    v_field = integrate_value(u_field)
    report = hjb_residual(u_field, v_field, boundary, cfg.params, cfg.disc)

    u_field.to_csv(outdir / "ugrid.csv")
    v_field.to_csv(outdir / "vgrid.csv")
    boundary.to_csv(outdir / "boundary.csv")
    _write_json(outdir / "residuals.json", report.to_dict())
    artifacts = ["ugrid.csv", "vgrid.csv", "boundary.csv", "residuals.json", "manifest.json"]
    if not args.no_figures:
        plots.render_boundary(outdir / "boundary.png", {cfg.disc.kind: boundary}, cfg.params.alpha)
        plots.render_field(outdir / "ugrid.png", u_field, "stopping value")
        plots.render_field(outdir / "vgrid.png", v_field, "dividend value")
        artifacts += ["boundary.png", "ugrid.png", "vgrid.png"]
    _write_manifest(outdir, cfg, "solve", artifacts)
    for w in boundary.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"solved {grid.shape[0]}x{grid.shape[1]} grid in {u_field.meta['outer_iters']} outer iterations; "
          f"artifacts in {outdir}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    mc = cfg.mc()
    if mc.n_paths < 1000:
        raise ConfigError("mc.n_paths < 1000: standard errors too large to verify anything")
    outdir = Path(cfg.outputs)
    meta = {"delta": cfg.solver().delta}
    u_field = _load_field_csv(outdir / "ugrid.csv", dict(meta))
    v_field = _load_field_csv(outdir / "vgrid.csv", dict(meta))
    bpath = args.boundary or (outdir / "boundary.csv")
    boundary = Boundary.from_csv(bpath, alpha=cfg.params.alpha, z_cap=float(u_field.grid.z[-1]))
    checks = battery.run_battery(cfg.params, cfg.disc, u_field, v_field, boundary,
                                 mc, quick=not args.full)
    _write_json(outdir / "verify.json", {
        "passed": all(c.passed for c in checks),
        "checks": [c.to_dict() for c in checks],
    })
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.message}")
    if not all(c.passed for c in checks):
        return 4
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    mc = cfg.mc()
    boundary = Boundary.from_csv(args.boundary, alpha=cfg.params.alpha,
                                 z_cap=float(cfg.grid_doc["z_max"]))
    r0 = args.r0 if args.r0 is not None else cfg.params.theta
    z0 = args.z0 if args.z0 is not None else cfg.params.alpha + 1.0
    est_v = simulate.run_dividend_policy(cfg.params, cfg.disc, boundary, z0, r0, mc)
    est_u = simulate.run_stopping_value(cfg.params, cfg.disc, boundary, z0, r0, mc)
    out = {
        "r0": r0,
        "z0": z0,
        "dividend_value": est_v.to_dict(),
        "stopping_value": est_u.to_dict(),
    }
    outdir = Path(cfg.outputs)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "simulate.json", out)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_oracle(args) -> int:
    params = ModelParams(mu=args.mu, sigma=args.sigma, alpha=args.alpha,
                         k=0.5, theta=0.15, gamma=0.3)  # CIR block unused by the closed form
    sol = constant_rate.solve_constant_rate(params, args.rho0)
    zs = np.linspace(params.alpha, sol.z_star + 1.0, args.samples)
    vals, derivs = sol.value_and_derivative(zs)
    out = sol.to_dict()
    out["alpha"] = params.alpha
    out["values"] = [{"z": float(z), "value": float(v), "derivative": float(u)}
                     for z, v, u in zip(zs, vals, derivs)]
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_trace(args) -> int:
    cfg = _load_config(args)
    mc = cfg.mc()
    boundary = Boundary.from_csv(args.boundary, alpha=cfg.params.alpha,
                                 z_cap=float(cfg.grid_doc["z_max"]))
    r0 = args.r0 if args.r0 is not None else cfg.params.theta
    z0 = args.z0 if args.z0 is not None else cfg.params.alpha + 1.0
    trace = simulate.trace_path(cfg.params, cfg.disc, boundary, z0, r0, mc, args.path_index)
    outdir = Path(cfg.outputs)
    outdir.mkdir(parents=True, exist_ok=True)
    simulate.write_trace_csv(outdir / "trace.csv", trace)
    if not args.no_figures:
        plots.render_trace(outdir / "trace.png", trace, boundary)
    print(f"traced path {args.path_index} for {len(trace)} steps; artifacts in {outdir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="divcir",
        description="Optimal dividend barriers under CIR stochastic discounting: "
                    "penalized free-boundary solve, closed-form oracle, Monte Carlo verification.",
    )
    parser.add_argument("--workers", type=int, default=None,
                        help="numba worker threads (results are identical for any count)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, boundary_required=False):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="dot.path=value",
                       help="override a config key (JSON-parsed value)")
        p.add_argument("--out", help="override the outputs directory")
        return p

    p = common(sub.add_parser("solve", help="solve the penalized problem and emit grids/boundary"))
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_solve)

    p = common(sub.add_parser("verify", help="run the invariant battery over solve artifacts"))
    p.add_argument("--boundary", help="boundary CSV (default: <outputs>/boundary.csv)")
    p.add_argument("--full", action="store_true",
                   help="use the configured Monte Carlo path count instead of the quick cap")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("simulate", help="Monte Carlo estimates for a stored boundary"))
    p.add_argument("--boundary", required=True)
    p.add_argument("--r0", type=float, default=None)
    p.add_argument("--z0", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="closed-form constant-discount solution")
    p.add_argument("--rho0", type=float, required=True)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--samples", type=int, default=9)
    p.set_defaults(func=cmd_oracle)

    p = common(sub.add_parser("trace", help="export one simulated path as CSV (+figure)"))
    p.add_argument("--boundary", required=True)
    p.add_argument("--path-index", type=int, default=0)
    p.add_argument("--r0", type=float, default=None)
    p.add_argument("--z0", type=float, default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = args.workers or os.environ.get("DIVCIR_WORKERS")
    if workers:
        import numba

        numba.set_num_threads(int(workers))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
