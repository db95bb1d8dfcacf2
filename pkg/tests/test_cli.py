import json
import subprocess
import sys

import pytest

from pacnet import cli
from pacnet.harness import read_csv
from pacnet.props import CheckResult


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "budgets": {"pretrain": {"epochs": 1, "batch_size": 512},
                    "allocate": {"epochs": 1, "batch_size": 512},
                    "calibrate": {"epochs": 2, "batch_size": 16}},
        "network": {"width": 6, "depth": 2}}))
    return str(path)


def test_parse_seeds():
    assert cli.parse_seeds("0..4") == [0, 1, 2, 3, 4]
    assert cli.parse_seeds("3") == [3]
    assert cli.parse_seeds("0,2,5") == [0, 2, 5]
    assert cli.parse_seeds("1,4..5") == [1, 4, 5]


def test_friedman_five_seeds(tmp_path, tiny_config, capsys):
    out = tmp_path / "res"
    code = cli.main(["friedman", "--strategy", "pacnet", "--n-target", "50", "--seeds", "0..4",
                     "--config", tiny_config, "--out", str(out)])
    assert code == 0
    records = read_csv(out / "friedman_1.csv")
    assert len(records) == 5 and {r.seed for r in records} == set(range(5))
    assert (out / "friedman_1.manifest.json").exists()
    assert "pacnet" in capsys.readouterr().out


def test_flags_override_config(tmp_path, tiny_config):
    out = tmp_path / "o"
    cli.main(["friedman", "--n-target", "5", "--config", tiny_config, "--out", str(out),
              "--prune-ratio", "0.5", "--lambda", "0.3", "--param", "2"])
    cfg = json.loads((out / "friedman_2.manifest.json").read_text())["config"]
    assert cfg["prune_ratio"] == 0.5 and cfg["lam"] == 0.3 and cfg["param"] == "2"
    assert cfg["network"]["width"] == 6


@pytest.mark.parametrize("argv", [
    ["friedman", "--prune-ratio", "1.0"],
    ["friedman", "--bogus"],
    ["celeba"],
    [],
    ["friedman", "--strategy", "boosting"],
    ["friedman", "--seeds", "4..1"],
    ["friedman", "--n-target", "0"],
    ["friedman", "--lambda", "-1"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_file_exit_2(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"task": "duffing"}')
    assert cli.main(["friedman", "--config", str(path)]) == 2
    assert cli.main(["friedman", "--config", str(tmp_path / "missing.json")]) == 2


def test_flagged_cell_exit_1(tmp_path, tiny_config):
    cfg = json.loads(open(tiny_config).read())
    cfg["n_targets"] = [20_000]   # larger than the target pool
    path = tmp_path / "big.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["friedman", "--config", str(path), "--out", str(tmp_path / "x")]) == 1


def test_props_exit_codes(monkeypatch, capsys):
    monkeypatch.setattr(cli, "run_all", lambda echo: [CheckResult("a", True, "")])
    assert cli.main(["props"]) == 0
    monkeypatch.setattr(cli, "run_all", lambda echo: [CheckResult("a", True, ""),
                                                      CheckResult("b", False, "boom")])
    assert cli.main(["props"]) == 1
    assert "1/2 checks passed" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pacnet", "friedman", "--prune-ratio", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "prune ratio" in proc.stderr
