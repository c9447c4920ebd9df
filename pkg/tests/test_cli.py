import json

import pytest
from click.testing import CliRunner

from prioritized_control import harness
from prioritized_control.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = {"collection_duration": 1.0, "n_trials": 2, "max_time": 1.0, "seed": 3}
    (d / "cfg.json").write_text(json.dumps(cfg))
    (d / "data").mkdir()
    runner = CliRunner()
    for name in harness.PRIMITIVE_NAMES:
        res = runner.invoke(main, ["collect", "--primitive", name, "--duration", "0.5",
                                   "--seed", "1", "--out", str(d / "data" / f"{name}.csv")])
        assert res.exit_code == 0, res.output
    return d


def test_collect_writes_dataset(workdir):
    lines = (workdir / "data" / "hit.csv").read_text().splitlines()
    assert len(lines) == 501
    assert json.loads((workdir / "data" / "hit.json").read_text())["primitive"] == "hit"


def test_collect_rejects_zero_duration(tmp_path):
    res = CliRunner().invoke(main, ["collect", "--primitive", "hit", "--duration", "0",
                                    "--seed", "1", "--out", str(tmp_path / "x.csv")])
    assert res.exit_code == 2


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_trials": 0}')
    res = CliRunner().invoke(main, ["study", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    bad.write_text("not json")
    res = CliRunner().invoke(main, ["study", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    res = CliRunner().invoke(main, ["study", "--config", str(tmp_path / "missing.json"),
                                    "--out", str(tmp_path / "o")])
    assert res.exit_code == 2


def test_train_and_simulate(workdir):
    runner = CliRunner()
    out = workdir / "ctrl.json"
    res = runner.invoke(main, ["train", "--order", "hit,move,orient", "--data",
                               str(workdir / "data"), "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert json.loads(out.read_text())["order"] == ["hit", "move", "orient"]
    res = runner.invoke(main, ["simulate", "--controller", str(out), "--trials", "2",
                               "--seed", "4", "--config", str(workdir / "cfg.json"),
                               "--log-dir", str(workdir / "logs")])
    assert res.exit_code == 0, res.output
    assert "hit⪰move⪰orient" in res.output
    assert (workdir / "logs" / "trial_4.csv").exists()


def test_train_single_model(workdir):
    out = workdir / "single.json"
    res = CliRunner().invoke(main, ["train", "--order", "single", "--data", str(workdir / "data"),
                                    "--out", str(out)])
    assert res.exit_code == 0
    assert json.loads(out.read_text())["kind"] == "single"


def test_train_rejects_bad_order(workdir):
    res = CliRunner().invoke(main, ["train", "--order", "hit,move", "--data",
                                    str(workdir / "data"), "--out", str(workdir / "x.json")])
    assert res.exit_code == 2


def test_study_and_report(workdir):
    runner = CliRunner()
    out = workdir / "study"
    res = runner.invoke(main, ["study", "--config", str(workdir / "cfg.json"), "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "Dominance Structure" in res.output
    for fmt in ("table", "csv", "plot-data"):
        res = runner.invoke(main, ["report", "--in", str(out), "--format", fmt])
        assert res.exit_code == 0
    assert res.output == (out / "hits.json").read_text()
    res = runner.invoke(main, ["report", "--in", str(out), "--format", "pdf"])
    assert res.exit_code == 2


def test_study_failure_exit_code(workdir, monkeypatch):
    def boom(cfg):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(harness, "run_dominance_study", boom)
    res = CliRunner().invoke(main, ["study", "--config", str(workdir / "cfg.json"),
                                    "--out", str(workdir / "never")])
    assert res.exit_code == 3
