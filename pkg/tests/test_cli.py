import json
from pathlib import Path

import numpy as np
import pytest

from divcir.cli import main


def write_config(tmp_path, **overrides):
    doc = {
        "model": {"mu": 1.0, "sigma": 1.0, "alpha": 0.0, "k": 0.5, "theta": 0.15, "gamma": 0.3},
        "discount": {"kind": "linear_shift", "r0": 0.05},
        "grid": {"n_r": 32, "n_z": 32},
        "mc": {"n_paths": 2000, "t_max": 40.0, "seed": 11},
        "outputs": str(tmp_path / "run"),
    }
    doc.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_solve_writes_artifacts_and_is_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg), "--no-figures"]) == 0
    run = tmp_path / "run"
    names = ["ugrid.csv", "vgrid.csv", "boundary.csv", "residuals.json", "manifest.json"]
    blobs = {n: (run / n).read_bytes() for n in names}
    assert main(["solve", "--config", str(cfg), "--no-figures"]) == 0
    for n in names:
        assert (run / n).read_bytes() == blobs[n], f"{n} changed between identical runs"
    manifest = json.loads(blobs["manifest.json"])
    assert manifest["config_sha256"]
    assert manifest["config"]["solver"]["delta"] == 0.01
    # boundary column is nonincreasing
    data = np.loadtxt(run / "boundary.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(data[:, 1]) <= 1e-12)


def test_solve_renders_figures(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg)]) == 0
    for name in ("boundary.png", "ugrid.png", "vgrid.png"):
        assert (tmp_path / "run" / name).stat().st_size > 0


def test_missing_key_names_it(tmp_path, capsys):
    doc = {
        "model": {"mu": 1.0, "alpha": 0.0, "k": 0.5, "theta": 0.15, "gamma": 0.3},
        "discount": {"kind": "constant", "rho0": 0.05},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    assert main(["solve", "--config", str(path)]) == 2
    assert "sigma" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    cfg = write_config(tmp_path, extra_section={"a": 1})
    assert main(["solve", "--config", str(cfg)]) == 2


def test_invalid_model_rejected(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg), "--set", "model.gamma=5.0"]) == 2  # Feller fails


def test_set_override_reaches_manifest(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg), "--no-figures", "--set", "solver.delta=0.02"]) == 0
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["config"]["solver"]["delta"] == 0.02


def test_verify_passes_on_fresh_solve(tmp_path):
    cfg = write_config(tmp_path, grid={"n_r": 48, "n_z": 48}, mc={"n_paths": 4000, "t_max": 60.0, "seed": 11})
    assert main(["solve", "--config", str(cfg), "--no-figures"]) == 0
    assert main(["verify", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "run" / "verify.json").read_text())
    assert report["passed"]
    names = {c["name"] for c in report["checks"]}
    assert {"monotone_z", "convex_z", "lipschitz_z", "laplace_transform_mc",
            "suboptimality_sweep", "determinism_bitwise"} <= names


def test_verify_detects_injected_boundary_fault(tmp_path):
    cfg = write_config(tmp_path, grid={"n_r": 48, "n_z": 48}, mc={"n_paths": 4000, "t_max": 60.0, "seed": 11})
    assert main(["solve", "--config", str(cfg), "--no-figures"]) == 0
    bpath = tmp_path / "run" / "boundary.csv"
    rows = bpath.read_text().splitlines()
    head = rows[0]
    data = [row.split(",") for row in rows[1:]]
    # hand-edit two nodes to be increasing
    data[5][1] = str(float(data[4][1]) + 0.2)
    data[9][1] = str(float(data[8][1]) + 0.3)
    bpath.write_text("\n".join([head] + [",".join(r) for r in data]) + "\n")
    assert main(["verify", "--config", str(cfg), "--boundary", str(bpath)]) == 4
    report = json.loads((tmp_path / "run" / "verify.json").read_text())
    failed = {c["name"] for c in report["checks"] if not c["passed"]}
    assert "boundary_nonincreasing" in failed


def test_verify_refuses_uninformative_path_count(tmp_path):
    cfg = write_config(tmp_path, mc={"n_paths": 10, "seed": 1})
    assert main(["solve", "--config", str(cfg), "--no-figures"]) == 0
    assert main(["verify", "--config", str(cfg)]) == 2


def test_oracle_reports_reference_barriers(capsys):
    assert main(["oracle", "--rho0", "0.05"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["z_star"] - 3.56) < 0.01
    assert main(["oracle", "--rho0", str(0.05 ** 0.5)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["z_star"] - 1.98) < 0.01
    assert {"z", "value", "derivative"} <= set(out["values"][0])


def test_simulate_liquidation_boundary(tmp_path, capsys):
    cfg = write_config(tmp_path)
    bpath = tmp_path / "flat.csv"
    bpath.write_text("r,b\n0.001,0.0\n2.0,0.0\n")
    assert main(["simulate", "--config", str(cfg), "--boundary", str(bpath), "--z0", "1.25"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["dividend_value"]["mean"] == 1.25
    assert out["dividend_value"]["std_error"] == 0.0


def test_trace_exports_csv(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["solve", "--config", str(cfg), "--no-figures"]) == 0
    bpath = tmp_path / "run" / "boundary.csv"
    assert main(["trace", "--config", str(cfg), "--boundary", str(bpath),
                 "--path-index", "2", "--no-figures"]) == 0
    lines = (tmp_path / "run" / "trace.csv").read_text().splitlines()
    assert lines[0] == "t,R,Z,K,S,D,I"
    assert len(lines) > 10
