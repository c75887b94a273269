import json

import pytest
import yaml

from langpose import cli
from langpose.gradcheck import run_gradcheck

TINY = {
    "model": {"backbone_channels": [4, 8], "feature_dim": 8, "fused_dim": 8, "embed_dim": 16, "attention_heads": 2},
    "data": {"synthetic": {"num_samples": 2, "image_size": [32, 32], "num_instances_range": [1, 2],
                           "min_center_distance": 5.0}},
    "optimizer": {"steps": 2, "batch_size": 2},
    "inference": {"center_threshold": 0.0, "max_instances": 2},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    out = root / "run"
    assert cli.main(["train", "--config", str(cfg), "--seed", "1", "--out", str(out)]) == 0
    return cfg, out


def test_train_outputs(trained):
    _, out = trained
    for name in ("config.yaml", "train_log.jsonl", "checkpoint_final.npz", "checkpoint_best.npz", "summary.json"):
        assert (out / name).exists()
    assert yaml.safe_load((out / "config.yaml").read_text())["seed"] == 1
    lines = (out / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 12 and json.loads(lines[0])["component"] == "total"
    assert json.loads((out / "summary.json").read_text())["steps"] == 2


def test_eval_predict_visualize(trained, tmp_path, capsys):
    cfg, out = trained
    ck = str(out / "checkpoint_final.npz")
    assert cli.main(["eval", "--config", str(cfg), "--checkpoint", ck, "--out", str(tmp_path / "e")]) == 0
    text = (tmp_path / "e" / "report.txt").read_text()
    assert text.startswith("AP=") and "AR_L=" in text
    assert set(json.loads((tmp_path / "e" / "report.json").read_text())) >= {"AP", "AP50", "curves"}
    assert cli.main(["predict", "--config", str(cfg), "--checkpoint", ck, "--out", str(tmp_path / "p")]) == 0
    records = json.loads((tmp_path / "p" / "predictions.json").read_text())
    assert all(set(r) == {"image_id", "category_id", "keypoints", "score"} for r in records)
    assert cli.main(["visualize", "--config", str(cfg), "--checkpoint", ck, "--index", "0",
                     "--out", str(tmp_path / "v")]) == 0
    assert len(list((tmp_path / "v").glob("*.png"))) == 1


def test_make_synthetic_then_eval_on_coco(trained, tmp_path):
    cfg, out = trained
    assert cli.main(["make-synthetic", "--config", str(cfg), "--count", "2", "--out", str(tmp_path / "d")]) == 0
    ann = tmp_path / "d" / "annotations.json"
    assert len(json.loads(ann.read_text())["images"]) == 2
    assert cli.main(["eval", "--checkpoint", str(out / "checkpoint_best.npz"), "--annotations", str(ann),
                     "--images", str(tmp_path / "d"), "--out", str(tmp_path / "e")]) == 0


def test_gradcheck_command(monkeypatch, tmp_path):
    monkeypatch.setattr("langpose.gradcheck.run_gradcheck",
                        lambda seed=0: run_gradcheck(seed=seed, only=["instance_mask"]))
    assert cli.main(["gradcheck", "--seed", "2", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"] is True


def test_config_errors_exit_2(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    bad = tmp_path / "bad.yaml"
    bad.write_text("foo: 1\n")
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert "unknown key(s) 'foo'" in capsys.readouterr().err
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.npz")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["predict"])
