import json

import pytest

from geomfilter.cli import main


def _run(tmp_path, *args):
    return main(list(args) + ["--out", str(tmp_path)])


def test_list_systems(tmp_path, capsys):
    assert _run(tmp_path, "list-systems") == 0
    assert "heisenberg" in capsys.readouterr().out
    assert json.loads((tmp_path / "list-systems.json").read_text())["pass"] is True


def test_simulate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--system", "torus", "--seed", "5", "--T", "0.2", "--dt", "0.01", "--x0", "[1.0, 2.0]"]
    assert _run(a, *args) == 0 and _run(b, *args) == 0
    assert (a / "path.csv").read_bytes() == (b / "path.csv").read_bytes()
    c = tmp_path / "c"
    args[4] = "6"
    assert _run(c, *args) == 0
    assert (a / "path.csv").read_bytes() != (c / "path.csv").read_bytes()


def test_decompose_passes(tmp_path, capsys):
    assert _run(tmp_path, "decompose", "--system", "heisenberg") == 0
    assert capsys.readouterr().out.startswith("PASS")
    report = json.loads((tmp_path / "decompose.json").read_text())
    assert report["pass"] and report["scenario"]["system"] == "heisenberg"


def test_lift_parabola(tmp_path):
    assert _run(tmp_path, "lift", "--system", "heisenberg", "--path", "parabola", "--x0", "[0, 0, 0]") == 0
    assert (tmp_path / "lift.csv").exists()


def test_weitzenbock_and_coefficients(tmp_path):
    assert _run(tmp_path, "weitzenbock", "--system", "symmetric_sphere", "--params", '{"n": 4, "k": 2}') == 0
    assert _run(tmp_path, "coefficients", "--system", "sphere_gradient", "--params", '{"n": 2}') == 0


def test_commute(tmp_path):
    assert _run(tmp_path, "commute", "--system", "torus") == 0


def test_scenario_file_and_flag_precedence(tmp_path):
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({"system": "torus", "seed": 1, "T": 0.1, "dt": 0.01, "x0": [1.0, 2.0]}))
    assert main(["simulate", "--scenario", str(scen), "--seed", "3", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "simulate.json").read_text())["scenario"]["seed"] == 3


def test_invalid_inputs_exit_2(tmp_path):
    scen = tmp_path / "bad.json"
    scen.write_text(json.dumps({"system": "torus", "colour": "red"}))
    assert main(["simulate", "--scenario", str(scen), "--out", str(tmp_path)]) == 2
    assert _run(tmp_path, "decompose", "--system", "klein_bottle") == 2
    assert _run(tmp_path, "weitzenbock", "--system", "torus") == 2
    bad_type = tmp_path / "bad_type.json"
    bad_type.write_text(json.dumps({"system": "torus", "particles": "many"}))
    assert main(["simulate", "--scenario", str(bad_type), "--out", str(tmp_path)]) == 2


def test_argparse_rejects_unknown_flag(tmp_path):
    with pytest.raises(SystemExit) as exc:
        _run(tmp_path, "simulate", "--colour", "red")
    assert exc.value.code == 2


def test_check_runs_selected_criteria(tmp_path, capsys):
    assert _run(tmp_path, "check", "--suite", "1,5") == 0
    out = capsys.readouterr().out
    assert "criterion  1 [PASS]" in out and "criterion  5 [PASS]" in out


def test_failed_check_exit_1(tmp_path, capsys):
    assert _run(tmp_path, "coefficients", "--system", "sphere_gradient", "--params", '{"n": 2}', "--tol", "1e-30") == 1
    assert capsys.readouterr().out.startswith("FAIL")


def test_numerical_failure_exit_3(tmp_path):
    args = ["simulate", "--system", "linear_filter_1d", "--params", '{"a": 50.0}', "--T", "1", "--dt", "0.01",
            "--x0", "[0.0, 1.0]"]
    assert _run(tmp_path, *args) == 3
