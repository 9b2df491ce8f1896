import json
import math
import subprocess
import sys

import pytest

from isingpaths.cli import main
from isingpaths.ising import read_dataset


def test_paths_command(tmp_path, capsys):
    assert main(["paths", "--kind", "zigzag", "--L", "4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["locality"]["mean_step"] == 1.6
    assert out["order"][:5] == [[0, 0], [1, 0], [2, 0], [3, 0], [0, 1]]


def test_paths_bad_size(capsys):
    assert main(["paths", "--kind", "hilbert", "--L", "6"]) == 2
    assert "error" in capsys.readouterr().err


def test_sample_and_train(tmp_path, capsys):
    data = tmp_path / "d.txt"
    assert main(["sample", "--L", "2", "--beta", "0.435", "--n", "100", "--seed", "3",
                 "--out", str(data)]) == 0
    header, configs = read_dataset(data)
    assert header["seed"] == 3 and configs.shape == (100, 2, 2)
    assert main(["train", "--data", str(data), "--model", "rnn", "--epochs", "1",
                 "--checkpoints", "1", "--n-model-samples", "50", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "trace.csv").exists() and (tmp_path / "r" / "final.ckpt").exists()


def test_oracle_command(tmp_path):
    f = tmp_path / "o.json"
    assert main(["oracle", "--L", "2", "--beta", "0.0", "--out", str(f)]) == 0
    o = json.loads(f.read_text())
    assert o["entropy"] == pytest.approx(4 * math.log(2))
    assert main(["oracle", "--L", "8", "--beta", "0.4"]) == 2


def test_experiment_commands(tmp_path, capsys):
    spec = {"name": "cli", "paths": ["snake"], "L": [2], "seeds": [0], "n_samples": 50,
            "train": {"epochs": 1, "checkpoint_epochs": [1], "n_model_samples": 50},
            "output_dir": str(tmp_path / "b")}
    f = tmp_path / "spec.json"
    f.write_text(json.dumps(spec))
    assert main(["experiment", "run", str(f)]) == 0
    assert main(["experiment", "report", str(tmp_path / "b")]) == 0
    assert "snake" in capsys.readouterr().out
    assert json.loads((tmp_path / "b" / "report" / "summary.json").read_text())["figures"] == ["fig2a", "fig2c"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "isingpaths", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "experiment" in r.stdout
