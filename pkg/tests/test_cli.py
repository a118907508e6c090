import json
import subprocess
import sys

import pytest

from kdop import cli
from kdop.config import PipelineConfig, load_config, parse_config_text, apply_overrides
from kdop.errors import DivergenceError

SMALL = """\
# tiny run for tests
synth.n_patients = 90
synth.T = 8
synth.v = 3
synth.u = 3
train.max_epochs = 3
train.patience = 2
gb.n_trees = 10
data.window_candidates = 180
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL + f"out_dir = {tmp_path / 'out'}\n" + extra)
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_full_run(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for cmd in ("synth", "prepare", "train", "evaluate"):
        code, _, err = run(capsys, cmd, "--config", cfg)
        assert code == 0, err
    out = tmp_path / "out"
    report = json.loads((out / "report.json").read_text())
    assert len(report["rotations"]) == 3
    assert {"fold_0", "fold_1", "fold_2"} <= {p.name for p in out.iterdir()}
    first = (out / "evaluation.json").read_bytes()
    assert run(capsys, "evaluate", "--config", cfg)[0] == 0
    assert (out / "evaluation.json").read_bytes() == first
    evaluation = json.loads(first)
    for r, row in zip(report["rotations"], evaluation["rotations"]):
        assert r["kd_op"] == row["kd_op"]
    code, _, err = run(capsys, "explain", "--config", cfg, "--patients", "p0001", "p0002")
    assert code == 0, err
    doc = json.loads((out / "explain" / "p0001.json").read_text())
    assert doc["patient_id"] == "p0001"
    assert (out / "explain" / "p0002.svg").read_text().startswith("<svg")
    code, _, err = run(capsys, "explain", "--config", cfg, "--patients", "ghost")
    assert code == 2 and "ghost" in err


def test_missing_config_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--config", tmp_path / "nope.cfg")
    assert code == 1
    assert err.startswith("kdop-error code=1 type=ConfigError")
    assert err.count("\n") == 1


def test_usage_errors_exit_1(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "train", "--seed", "x")[0] == 1
    assert run(capsys, "train", "--interval", "6")[0] == 1


def test_train_before_prepare_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--out", tmp_path / "empty")
    assert code == 2 and "DataError" in err


def test_training_failure_exit_3(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path)
    assert run(capsys, "synth", "--config", cfg)[0] == 0
    assert run(capsys, "prepare", "--config", cfg)[0] == 0

    def diverge(*a, **k):
        raise DivergenceError(4, float("nan"))
    monkeypatch.setattr(cli.pipeline.dynamic_kd, "train", diverge)
    code, _, err = run(capsys, "train", "--config", cfg)
    assert code == 3 and "epoch 4" in err


def test_print_config_round_trips(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, text, _ = run(capsys, "--print-config", "--config", cfg, "--seed", "7", "--interval", "14")
    assert code == 0
    assert "train.lr = 0.001" in text and "train.max_epochs = 3" in text
    again = apply_overrides(PipelineConfig(), parse_config_text(text))
    assert again.to_flat() == load_config(cfg, seed=7, interval_days=14).to_flat()


def test_defaults_printed():
    flat = PipelineConfig().to_flat()
    assert flat["train.max_epochs"] == 1000 and flat["train.patience"] == 50
    assert flat["train.dropout"] == 0.5 and flat["k"] == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "kdop", "evaluate", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.startswith("kdop-error code=2")
