import csv
import json

import pytest

from memtrader.cli import main
from memtrader.config import load_config

from conftest import regime_env, write_dataset


@pytest.fixture
def config(tmp_path):
    return write_dataset(tmp_path, regime_env(n_warm=6, n_test=20, seed=1), extra_toml="[sim]\nepochs = 3\n")


def test_validate(config, capsys):
    assert main(["validate", "--config", str(config)]) == 0
    out = capsys.readouterr().out
    assert "trading days=20" in out and out.strip().endswith("ok")


def test_validate_bad_row(config, capsys):
    prices = config.parent / "prices.csv"
    prices.write_text(prices.read_text().replace(",", ";", 10))
    assert main(["validate", "--config", str(config)]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_config_key(config, capsys):
    config.write_text(config.read_text() + "\n[backbone]\ntemprature = 0.2\n")
    assert main(["validate", "--config", str(config)]) == 1
    assert "temprature" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.toml")]) == 1


def test_missing_api_key_fails_before_running(config, monkeypatch, capsys, tmp_path):
    monkeypatch.delenv("MT_ABSENT_KEY", raising=False)
    config.write_text(
        config.read_text() + '\n[backbone]\nkind = "remote"\nendpoint = "http://127.0.0.1:9/v1"\napi_key_env = "MT_ABSENT_KEY"\n'
    )
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 1
    assert "MT_ABSENT_KEY" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_run_compare_replay(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "Buy & Hold" in printed and "tie-break epoch 0" in printed

    report = json.loads((out / "report.json").read_text())
    assert report["selection"] == {"epoch": 0, "note": "tie-break epoch 0", "epochs": 3}
    assert len(report["records"]) == 19
    assert set(report["config"]["checksums"]) == {"prices", "news", "filings"}
    with (out / "days.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["date", "action", "position", "asset_logret", "strategy_ret", "cum_pnl"]
    assert len(rows) == 19
    assert (out / "epochs.csv").read_text().count("\n") == 4

    assert main(["compare", "--report", str(out / "report.json"), "--config", str(config), "--csv", str(tmp_path / "t.csv")]) == 0
    assert (tmp_path / "t.csv").read_text().startswith("strategy,CR↑")

    assert main(["replay", "--transcript", str(out / "transcript.jsonl")]) == 0
    assert "60/60 decisions reproduced" in capsys.readouterr().out


def test_run_is_byte_identical(config, tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--config", str(config), "--out", str(tmp_path / name)]) == 0
    for artifact in ("report.json", "days.csv", "epochs.csv", "transcript.jsonl"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


def test_seed_override(config, tmp_path):
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "o"), "--seed-override", "7"]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["seed"] == 7 and report["config"]["sim"]["seed"] == 7


def test_replay_detects_tampering(config, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", str(config), "--out", str(out)])
    path = out / "transcript.jsonl"
    lines = path.read_text().splitlines()
    for i, line in enumerate(lines):
        entry = json.loads(line)
        if entry.get("kind") == "decision" and entry.get("phase") == "test":
            entry["action"] = "Sell" if entry["action"] != "Sell" else "Buy"
            lines[i] = json.dumps(entry)
            break
    path.write_text("\n".join(lines) + "\n")
    assert main(["replay", "--transcript", str(path)]) == 2
    assert "MISMATCH" in capsys.readouterr().out


def test_compare_rejects_mismatched_dates(config, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", "--config", str(config), "--out", str(out)])
    report = json.loads((out / "report.json").read_text())
    report["records"] = report["records"][:-2]
    (out / "short.json").write_text(json.dumps(report))
    assert main(["compare", "--report", str(out / "short.json"), "--config", str(config)]) == 1
    assert "test window" in capsys.readouterr().err


def test_provider_failure_exit_code(tmp_path, monkeypatch, stub_server, capsys):
    monkeypatch.setenv("MT_KEY", "sk")
    stub_server.responses = [(503, {"error": "down"})]
    env = regime_env(n_warm=4, n_test=5)
    config = write_dataset(
        tmp_path,
        env,
        extra_toml=f'[sim]\nepochs = 1\n\n[embedding]\nkind = "remote"\nendpoint = "{stub_server.url}"\nmodel = "e"\napi_key_env = "MT_KEY"\n',
    )
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 3


def test_config_defaults_and_overrides(tmp_path):
    env = regime_env(n_warm=4, n_test=5)
    config = write_dataset(
        tmp_path,
        env,
        extra_toml="[memory]\nk_top = 3\n\n[memory.shallow]\nQ = 7\n\n[sim]\nalpha_discount = 0.9\nseed = 4\n",
    )
    cfg = load_config(config)
    assert cfg.sim.k_top == 3 and cfg.sim.discount == 0.9 and cfg.sim.seed == 4
    assert cfg.memory.layers["shallow"].stability == 7.0
    assert cfg.memory.layers["deep"].stability == 365.0
    assert cfg.sim.temperature == 0.6
    assert cfg.asset.price_path == tmp_path / "prices.csv"
