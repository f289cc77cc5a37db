import json

import pytest

from kgexplore import engine
from kgexplore.actions import render
from kgexplore.admissible import admissible_actions
from kgexplore.cli import EXIT_FAULT, EXIT_INVALID, EXIT_OK, EXIT_USAGE, OUTPUT_ENV, main

from conftest import FIXTURES, GOLDEN, WALKTHROUGH, actions_of


def test_oracle_at_start_matches_admissible(world, capsys):
    assert main(["oracle"]) == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    s, _ = engine.reset(world)
    expected = [render(a, world.vocab, world.templates) for a in admissible_actions(world, s)]
    assert printed == expected and printed


def test_oracle_after_script(world, capsys):
    assert main(["oracle", "--actions", "open mailbox; east"]) == EXIT_OK
    cap = capsys.readouterr()
    s = engine.run_actions(world, actions_of(world, ["open mailbox", "east"]))[0]
    expected = [render(a, world.vocab, world.templates) for a in admissible_actions(world, s)]
    assert cap.out.splitlines() == expected
    assert f"{len(expected)} admissible" in cap.err


def test_kg_dump_matches_golden(capsys):
    assert main(["kg", "dump", "--actions", "; ".join(WALKTHROUGH)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.encode() == (GOLDEN / "minigrue_walkthrough.tsv").read_bytes()


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", str(FIXTURES / "deadend.json")]) == EXIT_OK
    assert "warning" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rooms": {}}))
    assert main(["validate", str(bad)]) == EXIT_INVALID


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    assert main(["run", "--set", "budget"]) == EXIT_USAGE
    assert main(["report", "--out", "/nonexistent-dir-for-test"]) == EXIT_USAGE


def test_invalid_config_exit(tmp_path):
    assert main(["run", "--out", str(tmp_path), "--set", "budget=-1"]) == EXIT_INVALID
    assert main(["oracle", "--actions", "dance wildly"]) == EXIT_INVALID


def test_run_report_and_inspect(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert main(["run", "--agent", "kg-a2c-explore", "--agent", "a2c", "--seeds", "0,1",
                 "--budget", "300"]) == EXIT_OK
    assert (tmp_path / "a2c" / "seed1" / "record.json").exists()
    assert main(["report"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "bottleneck score 15" in out
    assert (tmp_path / "ablation.csv").read_text().count("\n") == 3
    archive = tmp_path / "kg-a2c-explore" / "seed0" / "archive.bin"
    assert main(["archive", "inspect", str(archive), "--limit", "3"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("cells=")
    (tmp_path / "junk.bin").write_bytes(b"nope")
    assert main(["archive", "inspect", str(tmp_path / "junk.bin")]) == EXIT_INVALID


def test_resume_finishes_missing_seed(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path), "--agent", "a2c", "--seeds", "0,1", "--budget", "200"]) == EXIT_OK
    seed1 = tmp_path / "a2c" / "seed1" / "record.json"
    before = seed1.read_bytes()
    seed1.unlink()
    assert main(["resume", "--out", str(tmp_path)]) == EXIT_OK
    assert seed1.read_bytes() == before


def test_runtime_fault_exit(tmp_path, monkeypatch):
    from kgexplore import harness

    def boom(*a, **k):
        raise RuntimeError("broken")
    monkeypatch.setattr(harness, "train_a2c", boom)
    assert main(["run", "--out", str(tmp_path), "--agent", "a2c", "--seeds", "0", "--budget", "50"]) == EXIT_FAULT
