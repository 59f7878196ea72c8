from __future__ import annotations

import csv
import io
import subprocess
import sys

import pytest

from d2dsec.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_REJECTED, EXIT_USAGE, main


def _cfg(tmp_path, text: str, name: str = "run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_run_honest_writes_trace(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    assert main(["run", _cfg(tmp_path, "scenario = DD2D\nn = 2\n"), "--out", str(out)]) == EXIT_OK
    assert out.read_text().count("\n") > 5
    assert "accept" in capsys.readouterr().out


def test_run_tamper_exits_rejected_with_alert(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    cfg = _cfg(tmp_path, "scenario = RD2D\nn = 4\nadv: * tamper kind=request to=4 bit=300\n")
    assert main(["run", cfg, "--out", str(out)]) == EXIT_REJECTED
    assert "intruder_alert" in out.read_text()
    assert "intruder_alerts=1" in capsys.readouterr().out


def test_run_missing_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_USAGE
    assert "cannot read config" in capsys.readouterr().err


def test_run_bad_config_and_override(tmp_path, capsys):
    assert main(["run", _cfg(tmp_path, "scenario = DD2D\nn = 9\n")]) == EXIT_USAGE
    good = _cfg(tmp_path, "scenario = RD2D\nn = 3\n")
    assert main(["run", good, "--set", "n=5"]) == EXIT_OK
    assert main(["run", good, "--set", "nokey"]) == EXIT_USAGE
    assert main(["run", good, "--set", "colour=red"]) == EXIT_USAGE


def test_run_output_is_bit_identical(tmp_path):
    cfg = _cfg(tmp_path, "scenario = RD2DW\nn = 5\nseed = 11\n")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    main(["run", cfg, "--out", str(a)])
    main(["run", cfg, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_check_honest_trace(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    main(["run", _cfg(tmp_path, "scenario = RD2D\nn = 4\n"), "--out", str(out)])
    capsys.readouterr()
    assert main(["check", str(out), "--summary"]) == EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("CHECK ")]
    assert lines and all(l.endswith(" true") and l.split()[2] == "RD2D" for l in lines)


def test_check_replay_without_protection_fails(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    cfg = _cfg(tmp_path, "scenario = RD2D\nn = 4\nadv: * replay kind=request from=3 to=4\nhook: replay_protection=off\n")
    main(["run", cfg, "--out", str(out)])
    capsys.readouterr()
    assert main(["check", str(out)]) == EXIT_CHECK_FAILED
    assert "CHECK injective_destination_commit_source_running RD2D false" in capsys.readouterr().out


@pytest.mark.parametrize("content", ["not json\n", "", '{"slot": 0}\n'])
def test_check_malformed_trace(tmp_path, content):
    path = tmp_path / "bad.jsonl"
    path.write_text(content)
    assert main(["check", str(path)]) == EXIT_USAGE


def test_check_missing_trace(tmp_path):
    assert main(["check", str(tmp_path / "absent.jsonl")]) == EXIT_USAGE


def _csv(capsys) -> list[dict]:
    return list(csv.DictReader(io.StringIO(capsys.readouterr().out)))


def test_analyze_timeslots(capsys):
    assert main(["analyze", "--sweep", "timeslots", "--m", "1"]) == EXIT_OK
    assert len(_csv(capsys)) == 20


def test_analyze_b_does_not_move_rd2d(capsys):
    main(["analyze", "--sweep", "nodes", "--b", "2"])
    two = _csv(capsys)
    main(["analyze", "--sweep", "nodes", "--b", "7"])
    seven = _csv(capsys)
    assert len(two) == 19
    assert [r["rd2d_overhead"] for r in two] == [r["rd2d_overhead"] for r in seven]
    assert [r["sode_overhead"] for r in two] != [r["sode_overhead"] for r in seven]


def test_analyze_writes_file(tmp_path):
    out = tmp_path / "curve.csv"
    assert main(["analyze", "--sweep", "nodes", "--out", str(out)]) == EXIT_OK
    assert out.read_text().startswith("x_name,x,rd2d_overhead")


@pytest.mark.parametrize(
    "argv",
    [
        ["analyze", "--sweep", "nodes", "--n", "5"],
        ["analyze", "--sweep", "timeslots", "--t-prime", "3"],
        ["analyze", "--sweep", "timeslots", "--t", "10"],
        ["analyze", "--sweep", "nodes", "--m", "0"],
        ["analyze", "--sweep", "diagonal"],
        ["analyze"],
        ["sizes", "--n", "1-3"],
        ["sizes", "--n", "x"],
        ["costs", "--protocol", "NOPE"],
        ["frobnicate"],
        [],
    ],
)
def test_usage_errors_exit_1(argv):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_sizes_n20(capsys):
    assert main(["sizes", "--n", "20"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "20,intermediate_request,5300,662" in out
    assert "20,destination_relaying,5036,629" in out


def test_sizes_n2_prints_discrepancy_note(capsys):
    main(["sizes", "--n", "2"])
    out = capsys.readouterr().out
    assert "2,destination_relaying,284,35" in out
    assert "286" in out and "# note" in out


def test_costs(capsys):
    assert main(["costs", "--n", "10", "--protocol", "RD2D"]) == EXIT_OK
    assert "RD2D,10,3Enc+21H+1Dec" in capsys.readouterr().out


def test_costs_reconcile(capsys):
    assert main(["costs", "--n", "3", "--reconcile"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "# DD2D n=2 convention=tabulated" in out and "# RD2D n=3 convention=tabulated" in out


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "d2dsec", "costs", "--n", "2", "--protocol", "DD2D"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "DD2D,2,3Enc+3H+1Dec" in proc.stdout
