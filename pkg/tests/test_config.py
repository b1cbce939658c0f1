import json

import pytest

from reciperec.config import ConfigError, TrainConfig


def test_defaults():
    c = TrainConfig()
    assert (c.lr, c.heads, c.hidden, c.tau, c.lam) == (0.005, 4, 128, 0.07, 0.1)
    assert (c.node_drop, c.edge_drop, c.batch_size, c.epochs) == (0.1, 0.1, 1024, 100)


def test_json_round_trip(tmp_path):
    c = TrainConfig(lr=0.01, heads=2, hidden=16, settf_heads=2, predictor="cosine")
    path = tmp_path / "c.json"
    path.write_text(c.to_json())
    assert TrainConfig.load(path) == c


def test_int_accepted_for_float_field():
    assert TrainConfig.from_dict({"lr": 1}).lr == 1.0


def test_unknown_key_and_type_error_report_paths():
    with pytest.raises(ConfigError) as exc:
        TrainConfig.from_dict({"hiden": 3, "heads": "four", "pool_before_ffn": 1}, prefix="train.")
    paths = [p for p, _ in exc.value.problems]
    assert paths == ["train.hiden", "train.heads", "train.pool_before_ffn"]
    assert "train.heads: expected int, got str" in str(exc.value)


def test_bool_is_not_an_int():
    with pytest.raises(ConfigError, match="epochs"):
        TrainConfig.from_dict({"epochs": True})


@pytest.mark.parametrize("changes,field", [
    ({"hidden": 10}, "hidden"),
    ({"tau": 0.0}, "tau"),
    ({"node_drop": 1.0}, "node_drop"),
    ({"predictor": "dot"}, "predictor"),
    ({"lam": -0.5}, "lam"),
])
def test_range_checks(changes, field):
    with pytest.raises(ConfigError) as exc:
        TrainConfig().replace(**changes)
    assert field in [p for p, _ in exc.value.problems]


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{lr: 1")
    with pytest.raises(ConfigError, match="invalid JSON"):
        TrainConfig.load(p)


def test_non_object_rejected():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(json.loads("[1, 2]"))
