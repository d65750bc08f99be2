"""Command line behaviour: outputs, exit codes and determinism."""

import json
import subprocess
import sys

import pytest

from aecurv.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_catalog_lists_builtins(capsys):
    code, out, _ = run(capsys, "catalog")
    doc = json.loads(out)
    assert code == 0
    assert doc["schema"] == 1
    assert len(doc["metrics"]) == 5


def test_eval_flat_is_zero(capsys, tmp_path):
    pts = tmp_path / "p.txt"
    pts.write_text("5 0 0\n")
    code, out, _ = run(capsys, "eval", "--metric", "flat", "--param", "n=3", "--points", str(pts))
    doc = json.loads(out)
    assert code == 0
    p = doc["points"][0]
    for name in ("Ric", "B", "T", "J", "G_J"):
        assert all(v == 0 for row in p[name] for v in row), name
    assert p["R"] == 0 and p["Q"] == 0


def test_eval_schwarzschild_scalar_flat(capsys, tmp_path):
    pts = tmp_path / "p.json"
    pts.write_text("[[10, 0, 0]]")
    code, out, _ = run(capsys, "eval", "--metric", "schwarzschild_isotropic", "--param", "m=1", "--points", str(pts))
    R = json.loads(out)["points"][0]["R"]
    print("R at (10,0,0):", R)
    assert code == 0 and abs(R) < 1e-10


def test_eval_order_three_is_rejected(capsys):
    code, _, err = run(capsys, "eval", "--metric", "flat", "--order", "3")
    assert code == 3
    assert "Q requires derivative order 4" in err


def test_check_flat_and_conformal(capsys):
    code, out, _ = run(capsys, "check", "--metric", "flat", "--param", "n=5")
    doc = json.loads(out)
    assert code == 0
    assert all(v["max_residual"] == 0 for v in doc["identities"].values())
    code, out, _ = run(capsys, "check", "--metric", "conformal", "--param", "n=5")
    doc = json.loads(out)
    print({k: v["max_residual"] for k, v in doc["identities"].items()})
    assert code == 0 and doc["passed"]


def test_check_corrupted_build_fails(capsys):
    code, _, err = run(capsys, "check", "--metric", "conformal", "--param", "n=5", "--corrupt-for-testing")
    assert code == 1
    assert "div_G_J" in err


def test_flux_adm_schwarzschild(capsys):
    code, out, _ = run(capsys, "flux", "adm", "--metric", "schwarzschild_isotropic", "--param", "m=1")
    s = json.loads(out)["series"][0]
    print("F_inf:", s["F_inf"])
    assert code == 0 and abs(s["F_inf"] - 1) < 1e-4


def test_flux_ratio_conformal_five(capsys):
    code, out, _ = run(capsys, "flux", "thm45", "--metric", "conformal", "--param", "n=5", "--quad-degree", "2")
    doc = json.loads(out)
    print(doc["ratio_check"])
    assert code == 0
    assert abs(doc["ratio_check"]["expected"] - 1 / 32) < 1e-15
    assert doc["ratio_check"]["within_tolerance"]


def test_flux_flat_all_zero(capsys):
    code, out, _ = run(capsys, "flux", "all", "--metric", "flat", "--param", "n=4", "--radii", "8,4")
    doc = json.loads(out)
    assert code == 0
    for s in doc["series"]:
        assert all(v == 0 for v in s["values"]), s["functional"]


def test_flux_csv(capsys):
    code, out, _ = run(capsys, "flux", "adm", "--metric", "schwarzschild_isotropic", "--radii", "8,5",
                       "--format", "csv")
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[0] == "functional,radius,value,fit,diverged"
    assert len(lines) == 6


def test_decay_metric(capsys):
    code, out, _ = run(capsys, "decay", "--metric", "schwarzschild_isotropic", "--field", "metric")
    doc = json.loads(out)
    print("decay exponent:", doc["exponent"])
    assert code == 0 and abs(doc["exponent"] - 1) < 0.05


def test_linearize_slope(capsys):
    code, out, _ = run(capsys, "linearize")
    doc = json.loads(out)
    print("slope:", doc["slope"])
    assert code == 0 and doc["slope"] >= 1.9


@pytest.mark.parametrize("argv", [
    ["eval", "--metric", "kerr"],
    ["eval"],
    ["flux", "adm", "--metric", "flat", "--radii", "nonsense"],
    ["eval", "--metric", "flat", "--param", "nope"],
    ["eval", "--metric", "flat", "--points", "/nonexistent/file"],
])
def test_configuration_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv)
    print(argv, "->", err.strip())
    assert code == 2


def test_output_file_and_determinism(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    argv = ["flux", "energy", "--metric", "conformal", "--param", "n=5", "--quad-degree", "2", "--radii", "8,5"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_thread_count_does_not_change_output(tmp_path):
    outs = []
    for threads in ("1", "3"):
        proc = subprocess.run(
            [sys.executable, "-m", "aecurv", "flux", "gj", "--metric", "conformal", "--param", "n=5",
             "--quad-degree", "2", "--radii", "8,4"],
            capture_output=True, text=True, env={"AECURV_THREADS": threads, "PATH": ""}, check=False,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(proc.stdout)
    assert outs[0] == outs[1]
