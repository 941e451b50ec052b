import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pension_hjb import cli
from pension_hjb.series import NumericError
from pension_hjb.verify import CriterionResult


def run(tmp_path, *args, name="run"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_coeffs(tmp_path):
    code, out = run(tmp_path, "coeffs", "slovak")
    assert code == 0
    data = json.loads((out / "coeffs.json").read_text())
    assert data["risk_aversion_threshold"] == pytest.approx(1.78, abs=0.01)
    assert data["hypothesis"] == "(H) holds"
    for key in ("a", "b", "delta_mu", "alpha", "c", "gamma", "delta"):
        assert key in data["coefficients"]
    pre = data["sensitivity_preconditions"]
    assert pre["d"]["published_value"] == 306.0 and pre["d"]["threshold"] == pytest.approx(330.48, abs=0.01)


@pytest.mark.parametrize("args, files", [
    (["series", "slovak", "--order", "3"], ["series.csv", "series.json"]),
    (["bounds", "slovak"], ["bounds.csv"]),
    (["policy", "slovak"], ["policy.csv", "policy.json"]),
    (["policy", "slovak", "--source", "series"], ["policy.csv", "policy.json"]),
    (["policy", "slovak", "--source", "pde", "--grid", "101,200"], ["policy.csv", "policy.json"]),
    (["pde", "slovak", "--grid", "101,200"], ["pde.csv", "pde_richardson.json"]),
    (["sensitivity", "slovak", "--which", "d"], ["sensitivity.csv", "sensitivity.json"]),
    (["sim", "bulgarian", "--paths", "200"], ["fan.csv", "sim.json"]),
    (["compare", "slovak", "--paths", "200"], ["compare.json"]),
])
def test_commands_write_artifacts(tmp_path, args, files):
    code, out = run(tmp_path, *args)
    assert code == 0
    man = manifest(out)
    assert man["exit_status"] == 0
    for f in files:
        assert (out / f).is_file() and f in man["artifacts"]


def test_sim_terminal_mean(tmp_path):
    code, out = run(tmp_path, "sim", "slovak", "--paths", "10000", "--seed", "1")
    assert code == 0
    rows = list(csv.DictReader((out / "fan.csv").open()))
    assert [c for c in rows[0]] == ["t", "mean", "std", "q05", "q50", "q95"]
    assert float(rows[-1]["t"]) == 40
    assert 4.9 <= float(rows[-1]["mean"]) <= 5.5
    assert manifest(out)["seeds"] == [1]


@pytest.mark.slow
def test_compare_gap_surface(tmp_path):
    code, out = run(tmp_path, "compare", "slovak", "--dp", "--continuous")
    assert code == 0
    info = json.loads((out / "gap.json").read_text())
    assert {"max_gap", "argmax_t", "argmax_y"} <= set(info)
    rows = list(csv.DictReader((out / "gap.csv").open()))
    gaps = np.array([float(r["gap"]) for r in rows])
    assert gaps.max() == pytest.approx(info["max_gap"], rel=1e-12)


def test_manifest_contents(tmp_path):
    code, out = run(tmp_path, "sim", "slovak", "--eps", "0.09", "--paths", "50", "--seed", "3")
    man = manifest(out)
    assert man["command"] == "sim" and man["argv"][:2] == ["sim", "slovak"]
    assert man["scenario_params"]["kappa"] == 0.01
    assert man["params"]["eps_gross"] == 0.09 and man["params"]["kappa"] == 0.0
    assert man["flags"]["paths"] == 50 and man["seeds"] == [3]
    assert {"python", "numpy", "scipy"} <= set(man["versions"])
    assert man["wall_time_s"] >= 0


@pytest.mark.parametrize("args", [
    ["sim", "slovak", "--paths", "80", "--seed", "5", "--clip", "0,inf"],
    ["policy", "bulgarian", "--d", "5", "--source", "series", "--order", "2"],
    ["series", "slovak", "--order", "4"],
])
def test_replay_regenerates_artifacts(tmp_path, args):
    code, out = run(tmp_path, *args, name="first")
    assert code == 0
    again = tmp_path / "again"
    assert cli.main(["replay", str(out / "manifest.json"), "--out", str(again)]) == 0
    for name in manifest(out)["artifacts"]:
        assert (again / name).read_bytes() == (out / name).read_bytes(), name


def test_replay_of_missing_manifest(tmp_path):
    assert cli.main(["replay", str(tmp_path / "nope.json")]) == cli.EXIT_USAGE


def test_bad_config_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"mu_s": 0.1, "mu_b": 0.05}))
    code, out = run(tmp_path, "coeffs", str(bad))
    assert code == cli.EXIT_USAGE
    assert "sigma_s" in capsys.readouterr().err
    assert manifest(out)["exit_status"] == cli.EXIT_USAGE


@pytest.mark.parametrize("args", [
    ["series", "slovak", "--order", "-1"],
    ["frobnicate", "slovak"],
    ["pde", "slovak", "--grid", "10"],
    ["sim", "slovak", "--paths", "0"],
    ["policy", "slovak", "--clip", "1,0"],
    ["coeffs", "slovak", "--eps", "-1"],
    ["dp", "slovak", "--quad", "4"],
])
def test_usage_errors(tmp_path, args):
    code, _ = run(tmp_path, *args)
    assert code == cli.EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert cli.main(["--help"]) == cli.EXIT_OK
    assert "pension-hjb" in capsys.readouterr().out


def test_numeric_failure(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericError("did not converge")
    monkeypatch.setattr(cli, "solve_pde", boom)
    code, out = run(tmp_path, "pde", "slovak")
    assert code == cli.EXIT_NUMERIC and manifest(out)["exit_status"] == cli.EXIT_NUMERIC


def test_verify_reports_violation(tmp_path, monkeypatch):
    import pension_hjb.verify as verify
    fake = [CriterionResult(1, "ok", True, ""), CriterionResult(2, "bad", False, "")]
    monkeypatch.setattr(verify, "run_all", lambda echo=None: fake)
    code, out = run(tmp_path, "verify")
    assert code == cli.EXIT_INVARIANT
    data = json.loads((out / "verify.json").read_text())
    assert [r["passed"] for r in data["results"]] == [True, False]


def test_verify_success(tmp_path, monkeypatch):
    import pension_hjb.verify as verify
    monkeypatch.setattr(verify, "run_all", lambda echo=None: [CriterionResult(1, "ok", True, "")])
    assert run(tmp_path, "verify")[0] == cli.EXIT_OK


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pension_hjb", "coeffs", "slovak", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "coeffs.json").is_file()
