import math
import warnings

import numpy as np
import pytest
import torch

from langpose.model import (
    HeatmapHead,
    InstanceDecoupling,
    LanguagePoseNet,
    ModelConfig,
    ProjectionHead,
    TwoBranchBackbone,
    channel_recalibration,
    compute_instance_mask,
    extract_global_features,
    heatmap_head,
    local_maxima,
    project_image_features,
    sample_instance_features,
    spatial_recalibration,
)
from langpose.ops import CenterClampWarning

DT = torch.float64


def test_backbone_shape():
    bb = TwoBranchBackbone((16, 32), 32)
    assert extract_global_features(torch.rand(3, 64, 64), bb).shape == (32, 16, 16)


def test_backbone_zero_in_zero_out():
    bb = TwoBranchBackbone((4, 8), 8)
    for mod in bb.modules():
        if isinstance(mod, torch.nn.Conv2d):
            torch.nn.init.zeros_(mod.bias)
    assert not bb(torch.zeros(1, 3, 32, 32)).any()


def test_sampling_grid_midpoint_and_empty():
    F_map = torch.randn(5, 4, 6, dtype=DT)
    f = sample_instance_features(F_map, torch.tensor([[2.0, 3.0], [2.5, 1.0]], dtype=DT))
    assert torch.equal(f[0], F_map[:, 3, 2])
    assert torch.allclose(f[1], (F_map[:, 1, 2] + F_map[:, 1, 3]) / 2, atol=1e-15)
    assert sample_instance_features(F_map, torch.zeros(0, 2, dtype=DT)).shape == (0, 5)


def test_sampling_clamps_with_warning():
    F_map = torch.randn(2, 4, 4, dtype=DT)
    with pytest.warns(CenterClampWarning):
        f = sample_instance_features(F_map, torch.tensor([[7.0, -2.0]], dtype=DT))
    assert torch.equal(f[0], F_map[:, 0, 3])


def test_mask_values():
    f = torch.tensor([[1.0, 0.0]], dtype=DT)
    F_map = torch.tensor([[[2.0, 0.0, -3.0, 0.0]], [[0.0, 1.0, 0.0, 0.0]]], dtype=DT)
    M = compute_instance_mask(F_map, f, 5.0)[0, 0]
    logistic = lambda v: 1 / (1 + math.exp(-v))
    assert M[0].item() == pytest.approx(logistic(5), abs=1e-12)
    assert abs(M[0].item() - 0.9933) < 1e-4
    assert M[1].item() == pytest.approx(0.5, abs=1e-12)
    assert M[2].item() == pytest.approx(logistic(-5), abs=1e-12)
    assert abs(M[2].item() - 0.0067) < 1e-4
    # zero-norm pixel counts as cosine 0
    assert M[3].item() == pytest.approx(0.5, abs=1e-12)


def test_recalibrations():
    F_map = torch.randn(1, 3, 4, 4, dtype=DT)
    assert torch.equal(spatial_recalibration(F_map, torch.ones(1, 4, 4, dtype=DT)), F_map)
    assert not spatial_recalibration(F_map, torch.zeros(1, 4, 4, dtype=DT)).any()
    one = spatial_recalibration(torch.full((1, 1, 1, 1), 4.0), torch.full((1, 1, 1), 0.25))
    assert one.item() == 1.0
    assert torch.allclose(channel_recalibration(F_map, torch.full((1, 3), 50.0, dtype=DT)), F_map)
    assert torch.equal(channel_recalibration(F_map, torch.zeros(1, 3, dtype=DT)), 0.5 * F_map)
    assert channel_recalibration(F_map, torch.zeros(1, 3, dtype=DT)).shape == (1, 3, 4, 4)
    assert torch.equal(channel_recalibration(F_map, torch.full((1, 3), 2.0, dtype=DT), gated=False), 2 * F_map)


def test_fusion_zero_and_rectified():
    dec = InstanceDecoupling(3, 5).double()
    torch.nn.init.zeros_(dec.fuse.bias)
    z = torch.zeros(2, 3, 4, 4, dtype=DT)
    assert not dec.fuse_recalibrations(z, z).any()
    torch.nn.init.constant_(dec.fuse.bias, -1.0)
    torch.nn.init.zeros_(dec.fuse.weight)
    out = dec.fuse_recalibrations(torch.randn(2, 3, 4, 4, dtype=DT), torch.randn(2, 3, 4, 4, dtype=DT))
    assert out.shape == (2, 5, 4, 4) and not out.any()


def test_gaussian_mask_mode():
    dec = InstanceDecoupling(3, 4, mask_mode="gaussian").double()
    out = dec(torch.randn(1, 3, 8, 8, dtype=DT), torch.tensor([[2.0, 5.0]], dtype=DT), torch.zeros(1, dtype=torch.long))
    M = out["M"][0]
    assert M.argmax().item() == 5 * 8 + 2
    assert (M > 0).all() and (M < 1).all()
    with pytest.raises(ValueError):
        InstanceDecoupling(3, 4, mask_mode="box")


def test_projection_norm_shape_and_token_equivariance():
    torch.manual_seed(0)
    head = ProjectionHead(8, 16, num_heads=2).double().eval()
    x = torch.randn(2, 8, 4, 5, dtype=DT)
    y = head(x)
    assert y.shape == (2, 16, 4, 5)
    assert torch.allclose(y.norm(dim=1), torch.ones(2, 4, 5, dtype=DT), atol=1e-12)
    perm = torch.randperm(20)
    xp = x.flatten(2)[:, :, perm].reshape(2, 8, 4, 5)
    yp = head(xp).flatten(2)
    inv = torch.argsort(perm)
    assert torch.allclose(yp[:, :, inv], y.flatten(2), atol=1e-10)
    assert project_image_features(x[0], head).shape == (16, 4, 5)


def test_heatmap_head_range_and_shape():
    head = HeatmapHead(8, 5)
    p = heatmap_head(torch.randn(8, 6, 7) * 10, head)
    assert p.shape == (5, 6, 7)
    assert (p > 0).all() and (p < 1).all()


def test_local_maxima():
    heat = torch.zeros(6, 6)
    heat[1, 1], heat[4, 3], heat[4, 4], heat[0, 5] = 0.9, 0.5, 0.6, 0.05
    peaks, scores = local_maxima(heat, 0.1, 20)
    assert peaks.tolist() == [[1, 1], [4, 4]]
    assert torch.allclose(scores, torch.tensor([0.9, 0.6]))
    assert local_maxima(heat, 0.1, 1)[0].tolist() == [[1, 1]]


def tiny_model(**kw):
    cfg = ModelConfig(backbone_channels=(4, 8), feature_dim=8, fused_dim=8, embed_dim=16, num_joints=3,
                      attention_heads=2, **kw)
    return LanguagePoseNet(cfg).double().eval()


def model_inputs(n=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    unit = lambda t: t / t.norm(dim=-1, keepdim=True)
    return {
        "images": torch.rand(1, 3, 32, 32, generator=g, dtype=DT),
        "centers": torch.tensor([[1.0, 2.0], [5.0, 5.0], [3.5, 6.0]], dtype=DT)[:n],
        "image_index": torch.zeros(n, dtype=torch.long),
        "instance_text": unit(torch.randn(n, 16, generator=g, dtype=DT)),
        "joint_text": unit(torch.randn(3, 16, generator=g, dtype=DT)),
        "joints": torch.rand(n, 3, 2, generator=g, dtype=DT) * 7,
        "joint_valid": torch.tensor([[True, True, False]] * n),
    }


def test_forward_shapes():
    model = tiny_model()
    out = model(**model_inputs())
    assert out["F"].shape == (1, 8, 8, 8)
    assert out["M"].shape == (3, 8, 8) and out["f"].shape == (3, 8)
    assert out["F_sc"].shape == (3, 8, 8, 8)
    assert out["heatmaps"].shape == (3, 3, 8, 8)
    assert out["center_heatmap"].shape == (1, 8, 8)
    assert out["S_ins"].shape == (3, 8, 8) and out["F_sc_reduced"].shape == (3, 8, 8)
    assert out["S_keypoint"].shape == (3, 3, 3) and out["S_pixel"].shape == (3, 3, 8, 8)
    assert not out["F_keypoint"][:, 2].any()
    assert (out["M"] > 0).all() and (out["M"] < 1).all()


def test_instance_permutation():
    model = tiny_model()
    inp = model_inputs()
    perm = torch.tensor([2, 0, 1])
    a = model.decouple(model.backbone(inp["images"]), inp["centers"], inp["image_index"])
    b = model.decouple(model.backbone(inp["images"]), inp["centers"][perm], inp["image_index"])
    for key in ("f", "M", "F_sc", "heatmaps"):
        assert torch.allclose(a[key][perm], b[key], atol=1e-12)


def test_alternative_configs_run():
    for kw in ({"image_embedding_source": "instance"}, {"instance_reduction": "mean"},
               {"decoder_cross_attention": False}, {"mask_mode": "gaussian", "channel_gate": False},
               {"positional_encoding": True}):
        out = tiny_model(**kw)(**model_inputs())
        assert torch.isfinite(out["S_ins"]).all()


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(heatmap_stride=8)
    with pytest.raises(ValueError):
        ModelConfig(embed_dim=30, attention_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(image_embedding_source="text")
    with pytest.raises(ValueError):
        ModelConfig(feature_dim=0)
