import numpy as np
import pytest

from langpose.evaluation import PredictedPose
from langpose.visualize import render_overlay, visualize

from conftest import TINY_SKELETON, tiny_estimator


def test_empty_poses_leave_image_untouched():
    image = np.random.default_rng(0).random((3, 8, 10))
    out, info = render_overlay(image, [], TINY_SKELETON, upscale=1)
    assert info == {"instances": 0, "joints_drawn": 0}
    expect = (np.clip(image, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    assert np.array_equal(np.asarray(out), expect)


def test_overlay_is_deterministic_and_counts_joints():
    image = np.zeros((3, 16, 16))
    poses = [PredictedPose(np.array([[2, 2, 1], [5, 3, 1], [8, 8, 1], [12, 12, 1.0]]), 0.9),
             PredictedPose(np.array([[3, 10, 1], [6, 11, 1], [9, 12, 1], [14, 2, 1.0]]), 0.5)]
    a, info = render_overlay(image, poses, TINY_SKELETON)
    b, _ = render_overlay(image, poses, TINY_SKELETON)
    assert info["joints_drawn"] == 2 * TINY_SKELETON.m
    assert a.tobytes() == b.tobytes()
    assert a.size == (64, 64) and np.asarray(a).any()


def test_visualize_writes_png(tmp_path, small_dataset):
    est = tiny_estimator(steps=1, center_threshold=0.0, max_instances=2).fit(small_dataset)
    info = visualize(est, small_dataset[0], tmp_path / "a.png", joint=small_dataset.skeleton.joint_names[0])
    assert (tmp_path / "a.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert info["joints_drawn"] == info["instances"] * small_dataset.skeleton.m
    with pytest.raises(ValueError):
        visualize(est, small_dataset[0], tmp_path / "b.png", joint="wing")
