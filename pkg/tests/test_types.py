import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langpose.types import (
    COCO_SKELETON,
    CROWDPOSE_SKELETON,
    SYNTHETIC_SKELETON,
    InstanceAnnotation,
    SceneSample,
    SkeletonSpec,
    image_to_heatmap_coords,
    merge_heatmaps,
    render_center_heatmap,
    render_gt_heatmaps,
)

from conftest import make_instance


def one_joint(x, y, v=2):
    return make_instance([[x, y, v]], bbox=(0, 0, 10, 10), center=(5, 5))


ONE = SkeletonSpec(("nose",), (0.026,))


def test_skeleton_validation():
    with pytest.raises(ValueError):
        SkeletonSpec((), ())
    with pytest.raises(ValueError):
        SkeletonSpec(("a", "b"), (0.1,))
    with pytest.raises(ValueError):
        SkeletonSpec(("a", "a"), (0.1, 0.1))
    with pytest.raises(ValueError):
        SkeletonSpec(("a", ""), (0.1, 0.1))
    with pytest.raises(ValueError):
        SkeletonSpec(("a",), (0.0,))
    with pytest.raises(ValueError):
        SkeletonSpec(("a",), (0.1,), edges=((0, 1),))


def test_predefined_skeletons():
    assert COCO_SKELETON.m == 17 and COCO_SKELETON.joint_names[0] == "nose"
    assert CROWDPOSE_SKELETON.m == 14
    assert SYNTHETIC_SKELETON.m == 13
    assert SkeletonSpec.from_dict(COCO_SKELETON.to_dict()) == COCO_SKELETON


def test_instance_validation():
    with pytest.raises(ValueError):
        InstanceAnnotation(np.zeros((2, 3)), (0, 0, 0, 5), (0, 0))
    with pytest.raises(ValueError):
        InstanceAnnotation(np.array([[np.nan, 1, 2]]), (0, 0, 5, 5), (1, 1))


def test_scene_sample_size():
    s = SceneSample(np.zeros((3, 8, 12)), [], "x")
    assert s.image_size == (8, 12)


def test_heatmap_peak_and_neighbour():
    hm = render_gt_heatmaps(one_joint(4, 4), ONE, (10, 10), sigma=2.0)
    assert hm.values[0, 4, 4] == 1.0
    assert hm.values[0, 4, 6] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert abs(hm.values[0, 4, 6] - 0.6065) < 1e-4


def test_unlabeled_joint_gives_zero_channel():
    hm = render_gt_heatmaps(one_joint(4, 4, v=0), ONE, (10, 10))
    assert not hm.values.any()
    assert hm.out_of_bounds == ()


def test_out_of_bounds_joint_flagged():
    hm = render_gt_heatmaps(one_joint(9.6, 4), ONE, (10, 10))
    assert not hm.values.any()
    assert hm.out_of_bounds == (0,)


def test_rendering_is_deterministic():
    a = render_gt_heatmaps(one_joint(3.3, 6.7), ONE, (12, 9), 1.5)
    b = render_gt_heatmaps(one_joint(3.3, 6.7), ONE, (12, 9), 1.5)
    assert a.values.tobytes() == b.values.tobytes()


@settings(max_examples=50, deadline=None)
@given(x=st.integers(0, 15), y=st.integers(0, 15), dx=st.integers(-5, 5), dy=st.integers(-5, 5),
       sigma=st.floats(0.5, 4.0))
def test_integer_translation_shifts_channel(x, y, dx, dy, sigma):
    x2, y2 = min(max(x + dx, 0), 15), min(max(y + dy, 0), 15)
    dx, dy = x2 - x, y2 - y
    a = render_gt_heatmaps(one_joint(x, y), ONE, (16, 16), sigma).values[0]
    b = render_gt_heatmaps(one_joint(x2, y2), ONE, (16, 16), sigma).values[0]
    assert a.max() == 1.0 and b.max() == 1.0
    # b[i + dy, j + dx] == a[i, j] wherever both indices are inside the map
    src = a[max(-dy, 0):16 - max(dy, 0), max(-dx, 0):16 - max(dx, 0)]
    dst = b[max(dy, 0):16 - max(-dy, 0), max(dx, 0):16 - max(-dx, 0)]
    assert np.array_equal(src, dst)


def test_merge_is_elementwise_max():
    a = render_gt_heatmaps(one_joint(2, 2), ONE, (8, 8))
    b = render_gt_heatmaps(one_joint(5, 5), ONE, (8, 8))
    merged = merge_heatmaps([a, b])
    assert np.array_equal(merged.values, np.maximum(a.values, b.values))
    with pytest.raises(ValueError):
        merge_heatmaps([])


def test_center_heatmap_and_coordinate_map():
    c = render_center_heatmap([(1, 1), (6, 5)], (8, 8))
    assert c.shape == (1, 8, 8)
    assert c[0, 1, 1] == 1.0 and c[0, 5, 6] == 1.0
    # image pixel center (k + 0.5) * stride maps to heatmap pixel k
    assert np.allclose(image_to_heatmap_coords([[18.0, 2.0]], 4), [[4.0, 0.0]])


def test_render_rejects_bad_arguments():
    with pytest.raises(ValueError):
        render_gt_heatmaps(one_joint(1, 1), ONE, (0, 4))
    with pytest.raises(ValueError):
        render_gt_heatmaps(one_joint(1, 1), ONE, (4, 4), sigma=0)
    with pytest.raises(ValueError):
        render_gt_heatmaps(one_joint(1, 1), COCO_SKELETON, (4, 4))
