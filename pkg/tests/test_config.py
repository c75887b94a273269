import pytest
import yaml

from langpose.config import ConfigError, RunConfig, config_from_dict, dump_config, load_config, skeleton_by_name
from langpose.types import COCO_SKELETON


def write(tmp_path, data):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.losses.tau == 0.5 and cfg.losses.tau_k == 0.07
    assert cfg.losses.weights.pixel_prompt == 1.0
    assert cfg.skeleton().name == "synthetic"


def test_unknown_keys_are_fatal(tmp_path):
    with pytest.raises(ConfigError, match="'foo'"):
        load_config(write(tmp_path, {"foo": 1}))
    with pytest.raises(ConfigError, match="'model.dims'"):
        load_config(write(tmp_path, {"model": {"dims": 3}}))
    with pytest.raises(ConfigError, match="'losses.weights.lambda6'"):
        config_from_dict({"losses": {"weights": {"lambda6": 1.0}}})
    with pytest.raises(ConfigError, match="mapping"):
        config_from_dict({"model": 3})


def test_invalid_values(tmp_path):
    with pytest.raises(ConfigError, match="steps"):
        load_config(write(tmp_path, {"optimizer": {"steps": 0}}))
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config(write(tmp_path, {"optimizer": {"learning_rate": -1.0}}))
    with pytest.raises(ConfigError, match="source"):
        load_config(write(tmp_path, {"data": {"source": "lmdb"}}))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, {"data": {"skeleton": "horse"}}))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, {"prompts": {"template": "no fields"}}))


def test_missing_paths(tmp_path):
    data = {"data": {"source": "coco", "coco": {"annotations": str(tmp_path / "nope.json"), "images": str(tmp_path)}}}
    with pytest.raises(ConfigError, match="annotations"):
        load_config(write(tmp_path, data))
    assert load_config(write(tmp_path, data), check_paths=False).data.source == "coco"
    with pytest.raises(ConfigError, match="weights_path"):
        load_config(write(tmp_path, {"text_encoder": {"kind": "pretrained", "weights_path": "/nonexistent"}}))


def test_dump_load_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 5, "model": {"embed_dim": 32}, "losses": {"weights": {"keypoint_prompt": 0.0}}})
    dump_config(cfg, tmp_path / "out.yaml")
    back = load_config(tmp_path / "out.yaml")
    assert back == cfg


def test_to_estimator():
    cfg = config_from_dict({"seed": 3, "losses": {"weights": {"pixel_prompt": 0.0}}, "optimizer": {"steps": 9}})
    est = cfg.to_estimator(steps=4)
    assert est.seed == 3 and est.steps == 4
    assert est.loss_weights == (1.0, 1.0, 1.0, 1.0, 0.0)
    assert cfg.synthetic_config().seed == 3
    assert skeleton_by_name("coco") == COCO_SKELETON
