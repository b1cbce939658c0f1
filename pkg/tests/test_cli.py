import csv
import json

import pytest

from reciperec.cli import main

SMALL = {"hidden": 8, "heads": 2, "settf_heads": 2, "mlp_hidden": 8, "epochs": 2, "batch_size": 128}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-synth", "--out", str(out), "--users", "20", "--recipes", "120",
                 "--ingredients", "12", "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture(scope="module")
def trained(data, config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(data), "--out", str(out), "--config", str(config)]) == 0
    return out


def test_train_writes_artifacts(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"checkpoint.zip", "split.json", "manifest.json", "report.json", "report.txt",
            "report.csv"} <= names
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["config"]["hidden"] == 8
    assert len(manifest["trace"]) == 2


def test_zero_epochs_still_reports(data, config, tmp_path):
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--config", str(config),
                 "--epochs", "0", "-v"]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["metrics"]) == {"precision", "hr", "ndcg", "map"}


def test_eval_twice_is_identical(trained, data, tmp_path):
    args = ["eval", "--checkpoint", str(trained / "checkpoint.zip"), "--data", str(data),
            "--split", str(trained / "split.json")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "report.json").read_bytes(), (tmp_path / "b" / "report.json").read_bytes()
    assert a == b == (trained / "report.json").read_bytes()


def test_eval_on_mismatched_dataset_exits_2(trained, tmp_path, capsys):
    other = tmp_path / "other"
    assert main(["gen-synth", "--out", str(other), "--users", "20", "--recipes", "150",
                 "--ingredients", "12"]) == 0
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.zip"), "--data", str(other),
                 "--split", str(trained / "split.json")])
    assert code == 2
    assert "split was made for 120 recipes" in capsys.readouterr().err


def test_export_embeddings_rows(trained, data, tmp_path):
    out = tmp_path / "emb.csv"
    assert main(["export-embeddings", "--checkpoint", str(trained / "checkpoint.zip"),
                 "--data", str(data), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][:3] == ["node_type", "node_id", "v0"] and len(rows[0]) == 2 + 8
    assert len(rows) - 1 == 20 + 120 + 12


def test_resume_matches_uninterrupted_run(data, config, tmp_path):
    base = ["train", "--data", str(data), "--config", str(config)]
    assert main(base + ["--out", str(tmp_path / "full"), "--epochs", "3"]) == 0
    assert main(base + ["--out", str(tmp_path / "half"), "--epochs", "1"]) == 0
    assert main(base + ["--out", str(tmp_path / "rest"), "--epochs", "3",
                        "--resume", str(tmp_path / "half" / "checkpoint.zip")]) == 0
    for name in ("checkpoint.zip", "report.json"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "rest" / name).read_bytes()


def test_usage_and_config_errors_exit_1(data, tmp_path, capsys):
    assert main(["train", "--data", str(data)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"hidden": 10, "headz": 1}))
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--config", str(bad)]) == 1
    assert "headz: unknown key" in capsys.readouterr().err
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--tau", "-1"]) == 1
    assert main(["bogus"]) == 1


def test_missing_data_exits_2(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                 "--epochs", "0"]) == 2


def test_selfcheck_passes():
    assert main(["selfcheck"]) == 0


def test_selfcheck_detects_corrupted_op(capsys):
    assert main(["selfcheck", "--corrupt-op", "matmul"]) == 3
    out = capsys.readouterr().out
    assert "FAIL gradient/op/matmul" in out
