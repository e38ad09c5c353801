import json
import subprocess
import sys

import pytest

from hardiag.cli import main, parse_estimator
from hardiag.design import parse_design
from hardiag.estimators import AndrewsMonahan, BVDataDriven, BVFixed, Eicker, KernelLRV, Vogelsang

TREND = ["--design", "poly:n=50,kF=2", "--R", "0 1"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_diagnose_polynomial_size_one(capsys):
    code, out, _ = run(capsys, "diagnose", *TREND, "--est", "kernel:bartlett:M=10")
    doc = json.loads(out)
    assert code == 0 and doc["outcome"] == "SizeOne" and doc["gamma"] == 0.0
    assert doc["rule"] == "size_one_AR2" and "manifest" in doc


def test_diagnose_random_design_controllable(capsys):
    code, out, _ = run(capsys, "diagnose", "--design", "gauss:n=25,k=3,seed=7", "--R", "1 0 0",
                       "--est", "kernel:bartlett:M=5")
    assert code == 0 and json.loads(out)["outcome"] == "SizeControllable"


def test_malformed_design_json_exit_two(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"n": 5, "X": {"polynomial": 2}\n "R": [[0, 1]]}')
    code, _, err = run(capsys, "diagnose", "--design", str(p), "--est", "am")
    assert code == 2 and "line 2" in err


@pytest.mark.parametrize("argv", [
    ["diagnose", *TREND, "--est", "kernel:nope:M=3"],
    ["diagnose", *TREND, "--est", "mystery"],
    ["diagnose", "--design", "poly:n=50,kF=2", "--est", "am"],
    ["size-curve", *TREND, "--est", "am", "--critical", "3.84", "--grid", "ar1:0.5"],
    ["nonsense-command"],
])
def test_input_errors_exit_two(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == 2


def test_bound_am_is_one(capsys):
    code, out, _ = run(capsys, "bound", *TREND, "--est", "am")
    assert code == 0 and json.loads(out)["value"] == 1.0


def test_check_bvdd_params_file(capsys, tmp_path):
    p = tmp_path / "params.json"
    p.write_text(json.dumps({"a": [0.1, 0.2], "abar": [0.5], "h": [1, 2], "p": [0, 1]}))
    code, out, _ = run(capsys, "check", "--design", "poly:n=30,kF=2", "--R", "0 1",
                       "--est", f"bvdd:@{p}", "--trials", "40")
    doc = json.loads(out)
    assert code == 0 and doc["passed"] and doc["assumption5"]["passed"]


def test_size_curve_exact_and_mc_agree(capsys):
    base = ["size-curve", "--design", "poly:n=20,kF=2", "--R", "0 1", "--est", "kernel:bartlett:M=4",
            "--critical", "3.0", "--grid", "ar1:0.3;ar1:0.8", "--format", "json"]
    _, out_e, _ = run(capsys, *base, "--method", "exact")
    _, out_m, _ = run(capsys, *base, "--method", "mc", "--seed", "3", "--reps", "40000")
    ex, mc = json.loads(out_e)["rows"], json.loads(out_m)["rows"]
    for a, b in zip(ex, mc):
        assert abs(a["probability"] - b["probability"]) <= 4 * b["se"]


def test_csv_byte_identical_on_rerun(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    files = []
    out = tmp_path / "curve.csv"
    for _ in range(2):
        code, _, _ = run(capsys, "size-curve", *TREND, "--est", "kernel:bartlett:M=10",
                         "--critical", "3.8414588206941236", "--out", str(out))
        assert code == 0
        files.append(out.read_bytes())
    assert files[0] == files[1]
    text = files[0].decode()
    assert text.startswith("# command: hardiag size-curve")
    # 17 significant digits round-trip
    row = [l for l in text.splitlines() if l.startswith("ar1:0.999999,")][0]
    assert float(row.split(",")[1]) == float(format(float(row.split(",")[1]), ".17g"))


def test_mc_output_estimate_identical_on_rerun(capsys):
    argv = ["size-curve", *TREND, "--est", "am", "--critical", "3.84", "--grid", "ar1:0.5",
            "--seed", "9", "--reps", "500", "--format", "json"]
    a = json.loads(run(capsys, *argv)[1])["rows"]
    b = json.loads(run(capsys, *argv)[1])["rows"]
    assert a == b


def test_figure1_small(capsys):
    code, out, _ = run(capsys, "figure1", "--n", "30", "--k", "2-3", "--b", "0.5:1:0.25")
    rows = [l.split(",") for l in out.splitlines() if not l.startswith("#")]
    assert code == 0 and rows[0] == ["k", "b", "prob_nonneg"] and len(rows) == 7
    assert float(rows[3][2]) == 1.0  # b = 1: all-ones weights


def test_critical_refusal_and_value(capsys):
    code, out, _ = run(capsys, "critical", *TREND, "--est", "kernel:bartlett:M=10")
    assert code == 1 and json.loads(out)["verdict"]["gamma"] == 0.0
    code, out, _ = run(capsys, "critical", "--design", "gauss:n=20,k=2,seed=1", "--R", "1 0",
                       "--est", "eicker:identity", "--grid", "white")
    assert code == 0 and json.loads(out)["critical_value"] > 4.0


def test_power_command(capsys):
    code, out, _ = run(capsys, "power", "--design", "poly:n=11,kF=1", "--R", "1", "--est", "eicker:identity",
                       "--critical", "0.5")
    doc = json.loads(out)
    assert code == 0 and "infimal_power_zero" in doc["classification"]


def test_estimator_grammar(tmp_path):
    dp = parse_design("poly:n=30,kF=2", R=[[0, 1]])
    assert isinstance(parse_estimator("kernel:qs:M=4", dp), KernelLRV)
    assert isinstance(parse_estimator("eicker:identity", dp), Eicker)
    assert isinstance(parse_estimator("am", dp), AndrewsMonahan)
    v = parse_estimator("vogelsang:c=2,i=2,V=I,m=3", dp)
    assert isinstance(v, Vogelsang) and v.U.shape == (30, 3) and v.i == 2 and v.V == "I"
    u = tmp_path / "u.csv"
    u.write_text("\n".join(f"{(j / 30) ** 2}" for j in range(1, 31)))
    assert parse_estimator(f"vogelsang:c=1,i=1,V=A,U=@{u}", dp).U.shape == (30, 1)
    assert isinstance(parse_estimator("bvfixed:daniell:M=5:c=1", dp), BVFixed)
    p = tmp_path / "p.json"
    p.write_text('{"a": [0.1, 0.2], "abar": [0.5], "h": [1, 2], "p": [0, 1]}')
    assert isinstance(parse_estimator(f"bvdd:@{p}", dp), BVDataDriven)


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "hardiag.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
