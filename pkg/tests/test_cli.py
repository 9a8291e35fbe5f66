import json

import pytest

from phasechain.cli import main
from phasechain.config import parse_config


def test_dry_run(capsys):
    assert main(["fourier-scan", "--dry-run", "--set", "N=8,16", "--seed", "4"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.scenario == "fourier" and cfg["N"] == (8, 16) and cfg["seed"] == 4


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("scenario = simulate\ngamma = 0\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "gamma" in err and "line 2" in err
    assert not (tmp_path / "o").exists()
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["simulate", "--set", "bogus"]) == 1


def test_check_identities(tmp_path, capsys):
    out = tmp_path / "ids"
    assert main(["check-identities", "--out", str(out), "--set", "trials=20"]) == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL" not in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 0 and len(summary["config_hash"]) == 16
    assert parse_config((out / "config.txt").read_text())["trials"] == 20


def test_stationary_outputs(tmp_path):
    out = tmp_path / "st"
    assert main(["stationary", "--out", str(out), "--set", "N=8,12"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "summary.json" in names and "config.txt" in names
    assert any(n.endswith(".csv") for n in names)


def _csvs(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.csv"))}


@pytest.mark.parametrize("command,sets", [
    ("simulate", ["N=8", "n_traj=3", "t_burn=2", "t_measure=10"]),
    ("fourier-scan", ["N=8,16", "method=both", "n_traj=3", "burn_factor=0.5", "measure_factor=1"]),
])
def test_byte_identical_outputs(tmp_path, command, sets):
    args = [x for s in sets for x in ("--set", s)]
    runs = []
    for i, threads in enumerate((1, 1, 3)):
        out = tmp_path / f"run{i}"
        assert main([command, "--out", str(out), "--seed", "21", "--threads", str(threads)] + args) in (0, 2)
        runs.append(_csvs(out))
    assert runs[0] and runs[0] == runs[1] == runs[2]


def test_seed_changes_output(tmp_path):
    args = ["simulate", "--set", "N=8", "--set", "t_burn=1", "--set", "t_measure=5"]
    main(args + ["--out", str(tmp_path / "a"), "--seed", "1"])
    main(args + ["--out", str(tmp_path / "b"), "--seed", "2"])
    assert _csvs(tmp_path / "a") != _csvs(tmp_path / "b")
