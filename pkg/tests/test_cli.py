import json
import subprocess
import sys

import pytest

from specarb.cli import main
from specarb.market import read_bars_csv

TINY = """
[run]
seed = 3
episodes = 2
eval_episodes = 3
output_dir = "{out}"

[agent]
hidden_layers = [8]
batch_size = 8
warmup = 20
target_sync_period = 10
epsilon_decay_steps = 50

[env]
episode_len = 30
reward_mode = "raw_pnl"

[features]
n_returns = 2
indicators = ["sma:5", "rsi:5"]
zscore_window = 10
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY.format(out=(tmp_path / "run").as_posix()))
    return path


def test_train_then_backtest(tiny_config, tmp_path, capsys):
    assert main(["train", "--config", str(tiny_config)]) == 0
    run = tmp_path / "run"
    assert "sha256=" in capsys.readouterr().out
    lines = (run / "training_report.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["steps"] == 30
    assert (run / "train_config.toml").exists()

    code = main(["backtest", "--config", str(tiny_config), "--checkpoint", str(run / "checkpoint.json"), "--jobs", "2"])
    assert code == 0
    out = capsys.readouterr().out
    assert "total_pnl" in out and "policy: agent" in out
    report = json.loads((run / "evaluation_report.json").read_text())
    assert report["n_episodes"] == 3
    assert len(list((run / "ledgers").glob("episode_*.csv"))) == 3


def test_backtest_baselines_and_overrides(tiny_config, tmp_path):
    out = tmp_path / "flat"
    assert main(["backtest", "--config", str(tiny_config), "--policy", "flat", "--episodes", "2", "--out", str(out)]) == 0
    report = json.loads((out / "evaluation_report.json").read_text())
    assert report["n_episodes"] == 2 and report["aggregate"]["total_pnl"]["mean"] == 0.0


def test_backtest_dimension_mismatch(tiny_config, tmp_path, capsys):
    main(["train", "--config", str(tiny_config), "--episodes", "1"])
    wide = tmp_path / "wide.toml"
    wide.write_text(tiny_config.read_text().replace("n_returns = 2", "n_returns = 3"))
    code = main(["backtest", "--config", str(wide), "--checkpoint", str(tmp_path / "run" / "checkpoint.json")])
    err = capsys.readouterr().err
    assert code == 2 and "length 6" in err and "length 7" in err


def test_usage_errors(tiny_config, tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "absent.toml")]) == 2
    assert "absent.toml" in capsys.readouterr().err
    assert main(["backtest", "--config", str(tiny_config)]) == 2
    assert main(["backtest", "--config", str(tiny_config), "--checkpoint", str(tmp_path / "none.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["backtest"])
    assert exc.value.code == 2


def test_simulate_data(tiny_config, tmp_path, capsys):
    out = tmp_path / "bars.csv"
    assert main(["simulate-data", "--config", str(tiny_config), "--steps", "25", "--out", str(out)]) == 0
    bars = read_bars_csv(out)
    assert len(bars) == 25
    assert (tmp_path / "bars.csv.config.toml").exists()
    again = tmp_path / "again.csv"
    main(["simulate-data", "--config", str(tiny_config), "--steps", "25", "--out", str(again)])
    assert again.read_bytes() == out.read_bytes()
    assert main(["simulate-data", "--config", str(tiny_config), "--steps", "5", "--out", str(tmp_path / "no" / "x.csv")]) == 1


def test_oracle_check_and_fault_injection(capsys):
    assert main(["oracle-check"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3
    assert main(["oracle-check", "--inject-fault", "gradient-sign"]) == 1
    assert "FAIL gradient-fd" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "specarb", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate-data" in res.stdout


def test_zero_episodes_gives_empty_report(tiny_config, tmp_path):
    assert main(["train", "--config", str(tiny_config), "--episodes", "0"]) == 0
    assert (tmp_path / "run" / "training_report.jsonl").read_text() == ""


def test_random_backtest_repeatable(tiny_config, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        main(["backtest", "--config", str(tiny_config), "--policy", "random", "--seed", "7", "--out", str(out)])
        outs.append((out / "evaluation_report.json").read_bytes())
    assert outs[0] == outs[1]


def test_simulate_zero_steps_and_zero_sigma(tiny_config, tmp_path):
    out = tmp_path / "empty.csv"
    assert main(["simulate-data", "--config", str(tiny_config), "--steps", "0", "--out", str(out)]) == 0
    assert out.read_text() == "timestamp,bid,ask,volume\n"
    flat = tmp_path / "flat.toml"
    flat.write_text(tiny_config.read_text() + "\n[env.ou]\nsigma = 0.0\n")
    out = tmp_path / "flat.csv"
    assert main(["simulate-data", "--config", str(flat), "--steps", "40", "--out", str(out)]) == 0
    assert set(read_bars_csv(out).mid.tolist()) == {100.0}


def test_oracle_check_residuals_match_direct_computation(capsys):
    from specarb import selfcheck

    main(["oracle-check"])
    out = capsys.readouterr().out
    for r in selfcheck.run_all():
        assert f"{r.residual:.3e}" in out
