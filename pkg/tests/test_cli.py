import json
import subprocess
import sys

import pytest

from pdcc.cli import EXIT_BUDGET, EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main

from conftest import ROOT, SCENARIOS


def sc(name):
    return str(SCENARIOS / f"{name}.json")


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_passes_and_writes_a_trace(capsys, tmp_path):
    trace = tmp_path / "t.jsonl"
    code, out, _ = run(capsys, "run", "--scenario", sc("explore_tiny"), "--seed", "1",
                       "--trace-out", str(trace))
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "scenario explore_tiny seed 1"
    assert "epochs installed 1 checkpoints committed 2 transfers executed 1" in lines
    assert lines[-1] == "result pass"
    assert trace.read_text() == (ROOT / "tests" / "golden" / "explore_tiny_seed1.jsonl").read_text()


def test_run_output_is_stable(capsys):
    strip = lambda s: [l for l in s.splitlines() if not l.startswith("status")]
    a = run(capsys, "run", "--scenario", sc("add_validator"), "--seed", "7")[1]
    b = run(capsys, "run", "--scenario", sc("add_validator"), "--seed", "7")[1]
    assert strip(a) == strip(b)


@pytest.mark.parametrize("mode", ["online", "offline", "both"])
def test_check_modes(capsys, mode):
    code, out, _ = run(capsys, "run", "--scenario", sc("explore_tiny"), "--check", mode)
    assert code == EXIT_OK and "result pass" in out


def test_run_budget_exhausted(capsys):
    code, out, _ = run(capsys, "run", "--scenario", sc("add_validator"), "--max-steps", "20")
    assert code == EXIT_BUDGET and "budget-exhausted" in out


@pytest.mark.parametrize("argv, needle", [
    (["run", "--scenario", "/nonexistent.json"], "ParseError"),
    (["run", "--scenario", sc("overlap_violation")], "OverlapViolation"),
    (["run", "--scenario", sc("fault_bound_violation")], "FaultBoundViolation"),
    (["explore", "--scenario", sc("fastpath_random")], "ExplorerLimit"),
])
def test_usage_errors(capsys, argv, needle):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE and needle in err


@pytest.mark.parametrize("argv", [[], ["bogus"], ["sweep", "--scenario", "x", "--seeds", "5..2"],
                                  ["sweep", "--scenario", "x", "--seeds", "abc"],
                                  ["run", "--scenario", "x", "--check", "never"]])
def test_argparse_errors(capsys, argv):
    assert run(capsys, *argv)[0] == EXIT_USAGE


def test_assumption_override(capsys):
    code, out, _ = run(capsys, "run", "--scenario", sc("overlap_violation"),
                       "--allow-assumption-violations", "--max-steps", "20000")
    assert code in (EXIT_OK, EXIT_BUDGET)
    assert "verdict certification pass" in out


def test_sweep_healthy(capsys):
    code, out, _ = run(capsys, "sweep", "--scenario", sc("explore_tiny"), "--seeds", "0..4")
    assert code == EXIT_OK
    assert out.splitlines()[-1] == "sweep explore_tiny seeds 0..4 passed 5/5"


def test_sweep_mutant_reports_witness(capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", "--scenario", sc("mutant_learner_gate"), "--seeds", "0..1",
                       "--witness-dir", str(tmp_path))
    assert code == EXIT_VIOLATION
    assert "seed 0" in out and "quorum-integrity" in out
    witness = json.loads((tmp_path / "mutant_learner_gate-seed0.witness.json").read_text())
    assert witness
    assert (tmp_path / "mutant_learner_gate-seed0.trace.jsonl").exists()


def test_explore_clean_and_mutant(capsys, tmp_path):
    code, out, _ = run(capsys, "explore", "--scenario", sc("explore_tiny"), "--depth", "2",
                       "--walks", "2")
    assert code == EXIT_OK and "verdict pass" in out
    wout = tmp_path / "w.json"
    code, out, _ = run(capsys, "explore", "--scenario", sc("mutant_learner_gate"), "--depth", "2",
                       "--walks", "0", "--witness-out", str(wout))
    assert code == EXIT_VIOLATION and "counterexample quorum-integrity" in out
    assert json.loads(wout.read_text())["actions"]


def test_explore_state_budget(capsys):
    code, out, _ = run(capsys, "explore", "--scenario", sc("explore_tiny"), "--depth", "6",
                       "--max-states", "30", "--walks", "0")
    assert code == EXIT_BUDGET and "states" in out


def test_check_command(capsys, tmp_path):
    golden = ROOT / "tests" / "golden" / "explore_tiny_seed1.jsonl"
    rep = tmp_path / "r.json"
    code, out, _ = run(capsys, "check", "--trace", str(golden), "--report-out", str(rep))
    assert code == EXIT_OK
    assert json.loads(rep.read_text())["passed"] is True
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert run(capsys, "check", "--trace", str(bad))[0] == EXIT_USAGE
    assert run(capsys, "check", "--trace", str(tmp_path / "missing"))[0] == EXIT_USAGE


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "pdcc.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("run", "sweep", "explore", "check"):
        assert sub in out.stdout
