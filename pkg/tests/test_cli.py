import json
import subprocess
import sys

import numpy as np
import pytest

from sbpsat.cli import main
from sbpsat.errors import ConfigurationError
from sbpsat.mesh import DIRICHLET, NEUMANN
from sbpsat.studies import (
    StudyConfig, boundary_rule, load_config, run_study, validate_report)


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_verify_passes(tmp_path, capsys):
    code, out = run(["verify", "--out", str(tmp_path), "--quiet"], capsys)
    assert code == 0
    assert out.out.strip() == "verify: PASS"
    data = json.loads((tmp_path / "verify.json").read_text())
    assert validate_report(data) == []
    assert sum(r["kind"] == "operator" for r in data["rows"]) == 8
    assert data["passed"] is True


@pytest.mark.parametrize("defect,check", [("skew", "skew"), ("sigma2", "sigma2_sum")])
def test_injected_defect_fails_with_named_check(defect, check, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"inject_defect": defect, "families": ["omega"],
                               "degrees": [2]}))
    code, out = run(["verify", "--config", str(cfg)], capsys)
    assert code == 1
    assert "FAIL" in out.out
    assert check in out.out


def test_config_file_overrides_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"degrees": [1], "families": ["gamma"], "mesh_n": [2]}))
    code, _ = run(["assemble", "--p", "3", "--family", "omega", "--config", str(cfg),
                   "--out", str(tmp_path), "--quiet"], capsys)
    assert code == 0
    data = json.loads((tmp_path / "assemble.json").read_text())
    assert {(r["family"], r["p"]) for r in data["rows"]} == {("gamma", 1)}
    assert data["config"]["mesh_n"] == [2]


@pytest.mark.parametrize("argv", [["verify", "--alpha", "1.5"], ["verify", "--p", "7"],
                                  ["convergence", "--mesh-n", "0", "4"]])
def test_configuration_errors_exit_2(argv, capsys):
    code, out = run(argv, capsys)
    assert code == 2
    assert "configuration error" in out.err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"penalty": "br2"}))
    assert run(["verify", "--config", str(cfg)], capsys)[0] == 2
    cfg.write_text("[1, 2]")
    assert run(["verify", "--config", str(cfg)], capsys)[0] == 2
    assert run(["verify", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2


def test_assemble_exports_coo(tmp_path, capsys):
    code, _ = run(["assemble", "--family", "gamma", "--p", "2", "--scheme", "sipg",
                   "--mesh-n", "2", "--out", str(tmp_path), "--quiet"], capsys)
    assert code == 0
    lines = (tmp_path / "matrix_gamma_p2_sipg.coo").read_text().splitlines()
    nr, nc, nnz = map(int, lines[0].lstrip("# ").split())
    assert nr == nc == 8 * 7 and nnz == len(lines) - 1
    vals = np.array([ln.split() for ln in lines[1:]], dtype=float)
    A = np.zeros((nr, nc))
    A[vals[:, 0].astype(int), vals[:, 1].astype(int)] = vals[:, 2]
    np.testing.assert_allclose(A, A.T, atol=1e-12 * np.abs(A).max())


def test_outputs_are_deterministic(tmp_path, capsys):
    argv = ["unsteady", "--family", "gamma", "--p", "1", "--scheme", "br2",
            "--mesh-n", "3", "--quiet"]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"t_final": 0.02, "unsteady_alphas": [1.0]}))
    for name in ("a", "b"):
        assert run(argv + ["--config", str(cfg), "--out", str(tmp_path / name)], capsys)[0] == 0
    for f in sorted((tmp_path / "a").glob("*.csv")):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    ja = json.loads((tmp_path / "a" / "unsteady.json").read_text())
    jb = json.loads((tmp_path / "b" / "unsteady.json").read_text())
    ja["config"].pop("out"), jb["config"].pop("out")
    assert ja == jb


def test_relaxation_csv_header(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alphas": [0.1, 0.5, 1.0], "mesh_n": [3]}))
    code, _ = run(["relaxation", "--family", "gamma", "--p", "1", "--config", str(cfg),
                   "--out", str(tmp_path), "--quiet"], capsys)
    rows = (tmp_path / "relaxation_gamma_p1_br2.csv").read_text().splitlines()
    assert rows[0] == "alpha,min_eig"
    assert len(rows) == 4
    assert code in (0, 1)


def test_neumann_boundary_config(capsys):
    cfg = StudyConfig(study="conditioning", families=("omega",), degrees=(1,), mesh_n=(4,),
                      boundary={"left": NEUMANN})
    report = run_study(cfg)
    assert all("error" not in r for r in report.rows)


def test_boundary_rule():
    rule = boundary_rule({"top": NEUMANN})
    assert rule((0.5, 1.0)) == NEUMANN
    assert rule((0.0, 0.5)) == DIRICHLET
    with pytest.raises(ConfigurationError):
        rule((0.5, 0.5))
    with pytest.raises(ConfigurationError):
        StudyConfig(study="verify", boundary={"middle": NEUMANN})


def test_config_round_trip():
    cfg = StudyConfig(study="relaxation", alphas=(0.2, 0.4), mesh_n=(5,))
    assert StudyConfig.from_dict(cfg.as_dict()) == cfg


def test_validate_report_detects_problems():
    assert "missing key 'rows'" in validate_report({"study": "verify"})
    bad = {"study": "nope", "passed": 1, "config": {}, "rows": [1], "checks": [{}],
           "environment": {}}
    problems = validate_report(bad)
    assert len(problems) == 4


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"alpha": 0.5}')
    assert load_config(p) == {"alpha": 0.5}


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sbpsat", "verify", "--family", "gamma",
                          "--p", "1", "--quiet"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "verify: PASS" in res.stdout
