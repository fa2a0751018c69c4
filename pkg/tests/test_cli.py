import json
import subprocess
import sys

import pytest

from soslab.cli import parse_and_dispatch


def run(args, tmp_path, sub=None):
    out = tmp_path / (sub or "runs")
    return parse_and_dispatch(args + ["--out", str(out)]), out


def test_gap_matches_unit_rate_path(tmp_path, capsys):
    code, _ = run(["gap", "--L", "1", "--M", "1", "--beta", "2", "--phi0"], tmp_path)
    assert code == 0
    assert "lambda1 = 1 " in capsys.readouterr().out


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--L", "2", "--M", "1", "--beta", "1",
            "--horizon", "1000", "--seed", "7"]
    code1, out1 = run(args, tmp_path, "a")
    code2, out2 = run(args, tmp_path, "b")
    assert code1 == code2 == 0
    f1 = next(out1.glob("trajectory-*.jsonl"))
    f2 = next(out2.glob("trajectory-*.jsonl"))
    assert f1.name == f2.name
    assert f1.read_bytes() == f2.read_bytes()
    code3, out3 = run(args[:-1] + ["8"], tmp_path, "c")
    f3 = next(out3.glob("trajectory-*.jsonl"))
    assert f3.read_bytes() != f1.read_bytes()


def test_trajectory_file_echoes_config(tmp_path):
    code, out = run(
        ["simulate", "--L", "3", "--M", "1", "--beta", "2", "--seed", "1"], tmp_path
    )
    assert code == 0
    header = json.loads(next(out.glob("*.jsonl")).read_text().splitlines()[0])
    assert header["params"]["L"] == 3
    assert header["seed"] == 1


def test_usage_errors_exit_2(tmp_path):
    assert parse_and_dispatch(["no-such-command"]) == 2
    assert parse_and_dispatch(["gap", "--no-such-flag"]) == 2


def test_bad_field_reports_and_exits_2(tmp_path, capsys):
    code, _ = run(["gap", "--L", "0", "--M", "1", "--beta", "2"], tmp_path)
    assert code == 2
    assert "L must be a positive integer" in capsys.readouterr().err


def test_config_file_with_cli_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"L": 2, "M": 1, "beta": 1.0, "seed": 9}))
    code, out = run(
        ["simulate", "--config", str(cfg), "--beta", "2.5"], tmp_path
    )
    assert code == 0
    header = json.loads(next(out.glob("*.jsonl")).read_text().splitlines()[0])
    assert header["params"]["L"] == 2
    assert header["params"]["beta"] == 2.5
    assert header["seed"] == 9


def test_config_file_unknown_field(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"frobnicate": 1}))
    code, _ = run(["gap", "--config", str(cfg)], tmp_path)
    assert code == 2
    assert "frobnicate" in capsys.readouterr().err


def test_check_passes_with_empty_catalog(tmp_path, capsys):
    code, out = run(["check", "--phi0"], tmp_path)
    assert code == 0
    assert "11/11" in capsys.readouterr().out
    doc = json.loads(next(out.glob("check-*.json")).read_text())
    assert all(row["passed"] for row in doc["report"]["checks"])


def test_identities_verdict(tmp_path, capsys):
    code, _ = run(
        ["identities", "--L", "3", "--M", "2", "--beta", "1.5", "--R", "2",
         "--functions", "20", "--seed", "0"],
        tmp_path,
    )
    assert code == 0
    assert "residuals" in capsys.readouterr().out


def test_exit_time_censored_fails(tmp_path):
    with pytest.warns(UserWarning):
        code, _ = run(
            ["exit-time", "--L", "4", "--beta", "2", "--replicas", "5",
             "--horizon", "0.0001", "--seed", "3"],
            tmp_path,
        )
    assert code == 1


def test_scaling_exit_needs_four_points(tmp_path, capsys):
    code, _ = run(
        ["scaling-exit", "--Ls", "4", "--beta", "2", "--replicas", "10",
         "--seed", "2"],
        tmp_path,
    )
    assert code == 1
    assert "too few" in capsys.readouterr().out


def test_scaling_gap_writes_reports(tmp_path, capsys):
    code, out = run(
        ["scaling-gap", "--Ls", "2,3", "--Ms", "1", "--beta", "2"], tmp_path
    )
    assert code == 0
    assert "verdict=pass" in capsys.readouterr().out
    assert len(list(out.glob("scaling-gap-*.json"))) == 1
    csv_file = next(out.glob("scaling-gap-*.csv"))
    assert csv_file.read_text().startswith("# config ")


def test_coupling_fidelity_runs(tmp_path, capsys):
    code, _ = run(
        ["coupling-fidelity", "--L", "6", "--beta", "4", "--t", "0.5",
         "--replicas", "20", "--seed", "21"],
        tmp_path,
    )
    assert code == 0
    assert "rule-of-three" in capsys.readouterr().out


def test_rn_bound_holds(tmp_path, capsys):
    code, _ = run(["rn-bound", "--L", "6", "--beta", "2"], tmp_path)
    assert code == 0
    assert "holds" in capsys.readouterr().out


def test_killed_and_couple_outputs(tmp_path):
    code, out = run(["killed", "--L", "4", "--M", "2", "--beta", "2"], tmp_path)
    assert code == 0
    assert len(list(out.glob("killed-*.json"))) == 1
    code, out = run(
        ["couple", "--L", "4", "--beta", "2", "--horizon", "3", "--seed", "5"],
        tmp_path,
    )
    assert code == 0
    assert len(list(out.glob("coupling-*.jsonl"))) == 1


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "soslab.cli", "--version"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
