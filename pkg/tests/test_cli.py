import csv
import io
import json
import math
import subprocess
import sys

import pytest

from periodic_eigen import cli, sweep
from periodic_eigen.errors import NonConvergence
from periodic_eigen.presets import preset
from periodic_eigen.problem import CONST_A_GRADIENT_DRIFT, make_grid

SMALL = ["--nx", "16", "--nt", "32"]


def run(argv, capsysbinary):
    code = cli.main(argv)
    out, err = capsysbinary.readouterr()
    return code, out, err.decode()


@pytest.fixture
def problem_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"dim": 1, "domain": [0, 3.0], "b": 0.5, "A": "1", "V": "cos(x)*sin(2*pi*t)"}))
    return str(path)


def _rows(data: bytes):
    return list(csv.DictReader(io.StringIO(data.decode())))


def test_csv_single_row(capsysbinary):
    code, out, _ = run(["sweep", "--preset", "mzero", "--tau-list", "1", *SMALL], capsysbinary)
    assert code == 0
    lines = out.decode().splitlines()
    assert len(lines) == 2
    assert lines[0] == "tau,lambda,mu,iterations,residual,dlambda_formula,dlambda_fd"
    assert lines[1].endswith(",,")


def test_csv_lambda_matches_mu(capsysbinary, problem_file):
    code, out, _ = run(["sweep", "--problem", problem_file, "--tau-log", "0.1,10,3", "--derivative", *SMALL], capsysbinary)
    assert code == 0
    rows = _rows(out)
    assert len(rows) == 3
    for r in rows:
        tau = float(r["tau"])
        assert float(r["lambda"]) == pytest.approx(-tau * math.log(float(r["mu"])), rel=1e-9, abs=1e-13)
        assert r["dlambda_formula"] and r["dlambda_fd"]
        assert float(r["dlambda_formula"]) >= -1e-10


def test_period_enters_via_tau_eff(capsysbinary):
    code, out, _ = run(["sweep", "--preset", "ex2", "--tau-list", "1", "--format", "json", *SMALL], capsysbinary)
    assert code == 0
    row = json.loads(out)["rows"][0]
    assert row["lambda"] == pytest.approx(-(1 / (2 * math.pi)) * math.log(row["mu"]), rel=1e-9)


def test_json_round_trip_and_determinism(capsysbinary, tmp_path):
    out_file = tmp_path / "r.json"
    argv = ["sweep", "--preset", "thm12", "--tau-list", "0.5,2", "--limits", "--format", "json", "--out", str(out_file), *SMALL]
    assert run(argv, capsysbinary)[0] == 0
    first = out_file.read_bytes()
    assert (json.dumps(json.loads(first), sort_keys=True, indent=2) + "\n").encode() == first
    doc = json.loads(first)
    assert doc["class"] == doc["verdict"]["class"] == CONST_A_GRADIENT_DRIFT
    assert set(doc["limits"]) == {"int_lambda0", "lambda_inf"}
    assert run(argv, capsysbinary)[0] == 0
    assert out_file.read_bytes() == first


def test_parallel_matches_serial():
    spec = preset("mzero")
    grid = make_grid(spec, nx=16, nt=32)
    a = sweep.emit(sweep.run_sweep(spec, grid, [0.3, 1, 3], jobs=1), "json")
    b = sweep.emit(sweep.run_sweep(spec, grid, [0.3, 1, 3], jobs=2), "json")
    assert a == b


def test_failure_isolation(monkeypatch, capsysbinary):
    real = sweep.principal_floquet

    def flaky(spec, grid, tau, **kw):
        if tau == 1.0:
            raise NonConvergence("forced", 1.0, 0)
        return real(spec, grid, tau, **kw)

    monkeypatch.setattr(sweep, "principal_floquet", flaky)
    code, out, _ = run(["sweep", "--preset", "mzero", "--tau-list", "0.5,1,2", *SMALL], capsysbinary)
    assert code == 2
    rows = _rows(out)
    assert [r["residual"] for r in rows][1] == "ERROR:NonConvergence"
    assert rows[1]["lambda"] == "" and rows[1]["mu"] == ""
    assert rows[0]["lambda"] and rows[2]["lambda"]


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["solve", "--preset", "mzero"],
        ["solve", "--preset", "nosuch", "--tau", "1"],
        ["sweep", "--preset", "mzero", "--tau-log", "1,2"],
        ["sweep", "--preset", "mzero", "--tau-list", "1,x"],
    ],
)
def test_argparse_rejections(argv, capsysbinary):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 1
    capsysbinary.readouterr()


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--preset", "mzero", "--tau", "0"],
        ["solve", "--preset", "mzero", "--tau", "nan"],
        ["sweep", "--preset", "mzero", "--tau-list", "1,-2"],
        ["sweep", "--preset", "mzero", "--tau-list", ""],
        ["solve", "--preset", "mzero", "--a-expr", "2", "--tau", "1"],
        ["solve", "--problem", "/nonexistent.json", "--tau", "1"],
        ["solve", "--preset", "mzero", "--tau", "1", "--nx", "0"],
    ],
)
def test_usage_errors(argv, capsysbinary):
    assert run(argv, capsysbinary)[0] == 1


def test_bad_problem_file(tmp_path, capsysbinary):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dim": 1, "domain": [0, 1], "b": 0, "V": "log(x-2)"}))
    code, _, err = run(["solve", "--problem", str(path), "--tau", "1", *SMALL], capsysbinary)
    assert code == 1 and "log" in err
    path.write_text('{"dim": 1, "domain": [0, 1], "b": 0, "V": "sin(x"}')
    code, _, err = run(["solve", "--problem", str(path), "--tau", "1", *SMALL], capsysbinary)
    assert code == 1


def test_solve_and_limits(capsysbinary, problem_file):
    code, out, _ = run(["solve", "--problem", problem_file, "--tau", "2", *SMALL], capsysbinary)
    assert code == 0
    doc = json.loads(out)
    assert doc["lambda"] == pytest.approx(-2 * doc["log_mu"])
    assert doc["gap"] > 0
    code, out, _ = run(["limits", "--problem", problem_file, *SMALL], capsysbinary)
    assert code == 0
    lim = json.loads(out)
    assert lim["int_lambda0"] <= lim["lambda_inf"]


def test_solver_failure_exit(monkeypatch, capsysbinary):
    def boom(*a, **kw):
        raise NonConvergence("forced", 1.0, 0)

    monkeypatch.setattr(cli, "principal_floquet", boom)
    code, _, err = run(["solve", "--preset", "mzero", "--tau", "1", *SMALL], capsysbinary)
    assert code == 2 and "forced" in err


def test_verify_exit_codes(monkeypatch, capsysbinary):
    code, out, _ = run(["verify", "--preset", "ex2", "--tau-list", "1,1000", *SMALL], capsysbinary)
    assert code == 0
    doc = json.loads(out)
    assert doc["verdict"] == "non-monotone observed" and not doc["asserted"]
    code, out, _ = run(["verify", "--preset", "separable", "--tau-list", "0.1,1,10", *SMALL], capsysbinary)
    assert code == 0 and json.loads(out)["verdict"] == "constant"
    # a negative slack makes any round-off dip count as a violation
    code, out, _ = run(["verify", "--preset", "separable", "--tau-list", "0.1,1,10", "--slack", "-1", *SMALL], capsysbinary)
    assert code == 3 and not json.loads(out)["ok"]


def test_ex1_a_override(capsysbinary):
    base = run(["solve", "--preset", "ex1", "--tau", "1", *SMALL], capsysbinary)
    other = run(["solve", "--preset", "ex1", "--a-expr", "3+cos(2*pi*t)", "--tau", "1", *SMALL], capsysbinary)
    assert base[0] == other[0] == 0
    assert json.loads(base[1])["lambda"] != json.loads(other[1])["lambda"]
    code, _, _ = run(["solve", "--preset", "ex1", "--a-expr", "2+x", "--tau", "1", *SMALL], capsysbinary)
    assert code == 1


def test_console_script():
    proc = subprocess.run(
        [sys.executable, "-m", "periodic_eigen.cli", "solve", "--preset", "separable", "--tau", "1", *SMALL],
        capture_output=True,
        check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["scheme"]
