import numpy as np
import pytest
import torch

from langpose.losses import LossWeights, NonFiniteLossError
from langpose.model import LanguagePoseNet, ModelConfig
from langpose.prompts import PromptTemplateConfig, joint_prompt_vocabulary
from langpose.text import StubTextEncoder
from langpose.training import TextCache, TrainSettings, collate, loss_records, run_training, sample_targets


@pytest.fixture
def batch_setup(small_dataset):
    torch.manual_seed(0)
    skel = small_dataset.skeleton
    model = LanguagePoseNet(ModelConfig(backbone_channels=(4, 8), feature_dim=8, fused_dim=8, embed_dim=16,
                                        num_joints=skel.m, attention_heads=2))
    text = TextCache(StubTextEncoder(16, 0))
    joint_text = text(joint_prompt_vocabulary(skel))
    targets = [sample_targets(s, skel, 4, 2.0, PromptTemplateConfig()) for s in small_dataset]
    return model, text, joint_text, targets


def test_targets_and_collate(batch_setup, small_dataset):
    model, text, joint_text, targets = batch_setup
    t = targets[0]
    n = len(small_dataset[0].instances)
    assert t.heatmaps.shape == (n, small_dataset.skeleton.m, 8, 8) and len(t.prompts) == n
    inputs, tgt = collate(targets, text, joint_text)
    total = sum(len(x.prompts) for x in targets)
    assert inputs["centers"].shape == (total, 2) and inputs["instance_text"].shape == (total, 16)
    assert tgt["batch_size"] == len(targets)


def test_loss_records():
    rec = {"step": 3, "total": 1.0, "contrastive": 0.1, "heatmap": 0.2, "instance_prompt": 0.3,
           "keypoint_prompt": 0.2, "pixel_prompt": 0.2}
    lines = loss_records(rec)
    assert lines[0] == {"step": 3, "component": "total", "value": 1.0}
    assert [l["component"] for l in lines[1:]] == ["contrastive", "heatmap", "instance_prompt",
                                                   "keypoint_prompt", "pixel_prompt"]


def test_non_finite_loss_restores_last_good(batch_setup):
    model, text, joint_text, targets = batch_setup
    initial = {k: v.clone() for k, v in model.state_dict().items()}
    calls = []

    def batch_fn(idx):
        calls.append(1)
        inputs, tgt = collate([targets[int(i)] for i in idx], text, joint_text)
        if len(calls) == 2:
            inputs["images"] = inputs["images"] * float("nan")
        return inputs, tgt

    with pytest.raises(NonFiniteLossError):
        run_training(model, batch_fn, len(targets), TrainSettings(steps=5, batch_size=2))
    for k, v in model.state_dict().items():
        assert torch.equal(v, initial[k])


def test_zero_weights_do_not_touch_text_path(batch_setup):
    model, text, joint_text, targets = batch_setup
    before = {k: v.clone() for k, v in model.text_decoder.state_dict().items()}
    settings = TrainSettings(steps=2, batch_size=3, weights=LossWeights(1, 1, 0, 0, 0))
    run_training(model, lambda idx: collate([targets[int(i)] for i in idx], text, joint_text),
                 len(targets), settings)
    for k, v in model.text_decoder.state_dict().items():
        assert torch.equal(v, before[k])


def test_best_state_tracks_lowest_loss(batch_setup):
    model, text, joint_text, targets = batch_setup
    history, best, best_loss = run_training(
        model, lambda idx: collate([targets[int(i)] for i in idx], text, joint_text), len(targets),
        TrainSettings(steps=4, batch_size=3))
    assert best_loss == min(r["total"] for r in history)
    assert set(best) == set(model.state_dict())
    with pytest.raises(ValueError):
        run_training(model, None, 3, TrainSettings(steps=0))


def test_center_sigma_sharpens_center_map(small_dataset):
    s = small_dataset[0]
    wide = sample_targets(s, small_dataset.skeleton, 4, 2.0, PromptTemplateConfig())
    sharp = sample_targets(s, small_dataset.skeleton, 4, 2.0, PromptTemplateConfig(), center_sigma=1.0)
    assert np.array_equal(wide.heatmaps, sharp.heatmaps)
    assert sharp.center_heatmap.max() == 1.0 and sharp.center_heatmap.sum() < wide.center_heatmap.sum()
