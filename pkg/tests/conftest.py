import numpy as np
import pytest
import torch

from langpose.data import SyntheticSceneConfig, make_synthetic_dataset
from langpose.types import InstanceAnnotation, SceneSample, SkeletonSpec

TINY_SKELETON = SkeletonSpec(("nose", "left hand", "right hand", "tail"), (0.05, 0.06, 0.07, 0.08),
                             ((0, 1), (0, 2), (0, 3)), name="tiny")


@pytest.fixture
def tiny_skeleton():
    return TINY_SKELETON


def make_instance(keypoints, bbox=None, center=None):
    kp = np.asarray(keypoints, dtype=np.float64)
    if bbox is None:
        xy = kp[kp[:, 2] > 0, :2] if (kp[:, 2] > 0).any() else kp[:, :2]
        x0, y0 = xy.min(0) - 1
        x1, y1 = xy.max(0) + 1
        bbox = (x0, y0, x1 - x0, y1 - y0)
    if center is None:
        center = (bbox[0] + bbox[2] / 2, bbox[1] + bbox[3] / 2)
    return InstanceAnnotation(kp, bbox, center)


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SyntheticSceneConfig(num_instances_range=(1, 2), overlap_probability=0.5, image_size=(32, 32),
                               min_center_distance=5.0, seed=11)
    return make_synthetic_dataset(cfg, 3)


def tiny_estimator(**kw):
    from langpose.estimator import PoseEstimator

    params = dict(backbone_channels=(4, 8), feature_dim=8, fused_dim=8, embed_dim=16, attention_heads=2,
                  steps=3, batch_size=2, seed=0)
    params.update(kw)
    return PoseEstimator(**params)


@pytest.fixture
def f64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


# criterion number -> (description, passed); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        desc, ok = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {desc}")
