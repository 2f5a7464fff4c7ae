import json
import re
import subprocess
import sys
from pathlib import Path

import pytest

from kohnlab.algebra import extract_det_coefficients
from kohnlab.cli import main
from kohnlab.kohn_real import det_roots, eta_via_determinants
from kohnlab.model import BasisSet, RadialProblem, assemble_elements

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def value(out, label):
    m = re.search(rf"^{re.escape(label)} = (\S+)$", out, re.M)
    assert m, f"{label} missing from output:\n{out}"
    return m.group(1)


def test_unknown_key_is_a_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\nk = 0.5\nspeed = 3\n")
    code, _, err = run(capsys, "solve", "--config", cfg)
    assert code == 1
    assert "problem.speed" in err


def test_unknown_section_and_bad_type(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "--config", write(tmp_path, "[plot]\nx = 1\n"))
    assert code == 1 and "plot" in err
    code, _, err = run(capsys, "solve", "--config", write(tmp_path, '[basis]\nM = "8"\n', "b.toml"))
    assert code == 1 and "basis.M" in err


def test_bad_tolerance_and_suite(tmp_path, capsys):
    code, _, err = run(capsys, "verify", "--config",
                       write(tmp_path, "[verify.tolerances]\ntheta = -1.0\n"))
    assert code == 1 and "verify.tolerances.theta" in err
    code, _, _ = run(capsys, "verify", "--suites", "theta,nope")
    assert code == 1


def test_missing_config_and_usage(capsys):
    assert run(capsys, "solve", "--config", "/nonexistent/cfg.toml")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "solve", "--jobs", "0")[0] == 1


def test_solve_zero_potential(capsys):
    code, out, _ = run(capsys, "solve", "--config", str(CONFIGS / "zero_potential.toml"),
                       "--k", "0.5")
    # Gamma = 0: no preferred tau, which is reported as a degeneracy
    assert code == 2
    assert "degenerate = k_g" in out
    assert value(out, "eta_v") == "0.000000000000"
    assert value(out, "eta'_v") == "0.000000000000+0.000000000000i"


def test_solve_matches_determinant_route(capsys):
    code, out, _ = run(capsys, "solve", "--k", "0.5", "--tau", "0.3")
    assert code == 0
    c = extract_det_coefficients(assemble_elements(RadialProblem(k=0.5), BasisSet.default()))
    expected = f"{eta_via_determinants(c, 0.3):.12f}"
    assert value(out, "eta_v") == expected
    assert value(out, "eta_v (determinant route)") == expected


def test_solve_default_reports_optimum(capsys):
    code, out, _ = run(capsys, "solve", "--config", str(CONFIGS / "default.toml"))
    assert code == 0
    assert "tau0 = " in out and "degenerate = none" in out
    assert "anomalous" in out and "anomaly-free" in out


def test_solve_at_singular_tau(tmp_path, capsys):
    c = extract_det_coefficients(assemble_elements(RadialProblem(k=0.5), BasisSet.default()))
    tau_s = det_roots(c)[0]
    cfg = write(tmp_path, f"[problem]\nk = 0.5\ntau = {tau_s!r}\n")
    code, out, _ = run(capsys, "solve", "--config", cfg)
    assert code == 2
    assert "det(A) = 0" in out


def test_flag_overrides_config(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\nk = 0.9\ntau = 0.3\n")
    code, out, _ = run(capsys, "solve", "--config", cfg, "--k", "0.5")
    assert code == 0
    assert value(out, "k") == "0.5"


def test_scan_outputs(tmp_path, capsys):
    code, out, _ = run(capsys, "scan", "--out", str(tmp_path / "a"))
    assert code == 0
    assert "singular/degenerate k: none" in out
    first = {p.name: p.read_bytes() for p in (tmp_path / "a").iterdir()}
    assert set(first) == {"scan.csv", "scan.json"}
    header = first["scan.csv"].decode().splitlines()[0]
    assert header.startswith("k,tau0,tau1,eta0")
    assert len(first["scan.csv"].decode().splitlines()) == 11
    assert json.loads(first["scan.json"])["schema_version"] == 1

    code, _, _ = run(capsys, "scan", "--out", str(tmp_path / "b"), "--jobs", "2")
    assert code == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "b").iterdir()}
    assert second == first


def test_scan_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(capsys, "scan", "--out", str(blocker / "sub"))
    assert code == 1
    assert "cannot write" in err


def test_scan_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("KOHNLAB_SEED", "5")
    code, _, _ = run(capsys, "scan", "--out", str(tmp_path), "--suites", "routes")
    assert code == 0
    doc = json.loads((tmp_path / "scan.json").read_text())
    assert doc["metadata"]["scan"]["seed"] == 5
    assert doc["suites"][0]["status"] == "PASS"
    monkeypatch.setenv("KOHNLAB_SEED", "five")
    assert run(capsys, "scan", "--out", str(tmp_path))[0] == 1


def test_verify_default_passes(capsys):
    code, out, _ = run(capsys, "verify", "--config", str(CONFIGS / "default.toml"))
    assert code == 0
    lines = [l for l in out.splitlines() if l[:4] in ("PASS", "FAIL", "SKIP")]
    assert len(lines) == 12
    assert all(l.startswith("PASS") for l in lines)


def test_verify_zero_potential_skips(capsys):
    code, out, _ = run(capsys, "verify", "--config", str(CONFIGS / "zero_potential.toml"))
    assert code == 0
    assert "degenerate-skip at 10 k" in out
    assert "FAIL" not in out


def test_verify_coarse_quadrature_fails_theta(capsys):
    code, out, _ = run(capsys, "verify", "--config", str(CONFIGS / "coarse_quadrature.toml"),
                       "--suites", "theta")
    assert code == 2
    line = next(l for l in out.splitlines() if "theta" in l)
    assert line.startswith("FAIL")
    assert "residual" in out


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "kohnlab.cli", "solve", "--k", "0.5", "--tau", "0.3"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "eta_v = " in res.stdout
