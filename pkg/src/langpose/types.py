"""Shared domain types, skeleton definitions and ground-truth heatmap rendering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "SkeletonSpec",
    "InstanceAnnotation",
    "SceneSample",
    "Heatmap",
    "COCO_SKELETON",
    "CROWDPOSE_SKELETON",
    "SYNTHETIC_SKELETON",
    "render_gt_heatmaps",
    "render_center_heatmap",
    "merge_heatmaps",
    "image_to_heatmap_coords",
]

# COCO visibility flags
UNLABELED, OCCLUDED, VISIBLE = 0, 1, 2


@dataclass(frozen=True)
class SkeletonSpec:
    joint_names: Tuple[str, ...]
    oks_sigmas: Tuple[float, ...]
    edges: Tuple[Tuple[int, int], ...] = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "oks_sigmas", tuple(float(s) for s in self.oks_sigmas))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        if len(self.joint_names) < 1:
            raise ValueError("skeleton needs at least one joint")
        if len(self.joint_names) != len(self.oks_sigmas):
            raise ValueError(
                f"{len(self.joint_names)} joint names but {len(self.oks_sigmas)} OKS sigmas"
            )
        if any(not n for n in self.joint_names):
            raise ValueError("joint names must be non-empty")
        if len(set(self.joint_names)) != len(self.joint_names):
            raise ValueError("joint names must be unique")
        if any(not s > 0 for s in self.oks_sigmas):
            raise ValueError("OKS sigmas must be strictly positive")
        m = len(self.joint_names)
        for a, b in self.edges:
            if not (0 <= a < m and 0 <= b < m):
                raise ValueError(f"edge ({a}, {b}) references a missing joint")

    @property
    def m(self) -> int:
        return len(self.joint_names)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joint_names": list(self.joint_names),
            "oks_sigmas": list(self.oks_sigmas),
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonSpec":
        return cls(
            joint_names=d["joint_names"],
            oks_sigmas=d["oks_sigmas"],
            edges=[tuple(e) for e in d.get("edges", ())],
            name=d.get("name", "custom"),
        )


_COCO_NAMES = (
    "nose", "left eye", "right eye", "left ear", "right ear",
    "left shoulder", "right shoulder", "left elbow", "right elbow",
    "left wrist", "right wrist", "left hip", "right hip",
    "left knee", "right knee", "left ankle", "right ankle",
)
_COCO_SIGMAS = tuple(s / 10.0 for s in (
    .26, .25, .25, .35, .35, .79, .79, .72, .72, .62, .62, 1.07, 1.07, .87, .87, .89, .89
))
_COCO_EDGES = (
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 12), (5, 11), (6, 12), (5, 6),
    (5, 7), (6, 8), (7, 9), (8, 10), (1, 2), (0, 1), (0, 2), (1, 3), (2, 4),
)
COCO_SKELETON = SkeletonSpec(_COCO_NAMES, _COCO_SIGMAS, _COCO_EDGES, name="coco")

CROWDPOSE_SKELETON = SkeletonSpec(
    (
        "left shoulder", "right shoulder", "left elbow", "right elbow",
        "left wrist", "right wrist", "left hip", "right hip",
        "left knee", "right knee", "left ankle", "right ankle", "head", "neck",
    ),
    tuple(s / 10.0 for s in (.79, .79, .72, .72, .62, .62, 1.07, 1.07, .87, .87, .89, .89, .79, .79)),
    (
        (12, 13), (13, 0), (13, 1), (0, 2), (2, 4), (1, 3), (3, 5),
        (0, 6), (1, 7), (6, 7), (6, 8), (8, 10), (7, 9), (9, 11),
    ),
    name="crowdpose",
)

# COCO without eyes and ears; used by the synthetic stick-figure generator.
SYNTHETIC_SKELETON = SkeletonSpec(
    ("nose",) + _COCO_NAMES[5:],
    (_COCO_SIGMAS[0],) + _COCO_SIGMAS[5:],
    (
        (0, 1), (0, 2), (1, 2), (1, 3), (3, 5), (2, 4), (4, 6),
        (1, 7), (2, 8), (7, 8), (7, 9), (9, 11), (8, 10), (10, 12),
    ),
    name="synthetic",
)


@dataclass
class InstanceAnnotation:
    """One person: ``keypoints`` is an ``(m, 3)`` array of ``(x, y, v)`` in pixels,
    ``bbox`` is ``(x, y, w, h)`` and ``center`` is ``(x, y)``."""

    keypoints: np.ndarray
    bbox: Tuple[float, float, float, float]
    center: Tuple[float, float]
    area: Optional[float] = None

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        if kp.ndim != 2 or kp.shape[1] != 3:
            raise ValueError(f"keypoints must have shape (m, 3), got {kp.shape}")
        if not np.all(np.isin(kp[:, 2], (0, 1, 2))):
            raise ValueError("visibility flags must be 0, 1 or 2")
        if not np.all(np.isfinite(kp[kp[:, 2] > 0, :2])):
            raise ValueError("labeled keypoints must have finite coordinates")
        self.keypoints = kp
        self.bbox = tuple(float(b) for b in self.bbox)
        self.center = tuple(float(c) for c in self.center)
        if not (self.bbox[2] > 0 and self.bbox[3] > 0):
            raise ValueError(f"bbox must have positive extent, got {self.bbox}")

    @property
    def num_joints(self) -> int:
        return self.keypoints.shape[0]

    @property
    def visibility(self) -> np.ndarray:
        return self.keypoints[:, 2].astype(int)

    @property
    def num_labeled(self) -> int:
        return int(np.count_nonzero(self.keypoints[:, 2] > 0))

    @property
    def bbox_area(self) -> float:
        if self.area is not None:
            return float(self.area)
        return float(self.bbox[2] * self.bbox[3])

    def copy(self) -> "InstanceAnnotation":
        return InstanceAnnotation(self.keypoints.copy(), self.bbox, self.center, self.area)


@dataclass
class SceneSample:
    """An image (``3 x H x W`` floats in [0, 1]) with its person annotations.

    ``affine`` holds the 2x3 matrix mapping the source image's pixel coordinates
    to this sample's coordinates when the sample came out of augmentation.
    """

    image: np.ndarray
    instances: list
    sample_id: str = ""
    affine: Optional[np.ndarray] = None
    crowd_index: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValueError(f"image must have shape (3, H, W), got {img.shape}")
        self.image = img
        self.instances = list(self.instances)

    @property
    def image_size(self) -> Tuple[int, int]:
        return int(self.image.shape[1]), int(self.image.shape[2])

    def __len__(self):
        return len(self.instances)


@dataclass
class Heatmap:
    values: np.ndarray
    stride: int
    out_of_bounds: Tuple[int, ...] = ()

    @property
    def shape(self):
        return self.values.shape


def image_to_heatmap_coords(xy, stride: int) -> np.ndarray:
    """Map image pixel coordinates to heatmap coordinates.

    Heatmap pixel ``k`` covers image span ``[k*stride, (k+1)*stride)`` and its
    center sits at image coordinate ``(k + 0.5) * stride``.
    """
    return np.asarray(xy, dtype=np.float64) / stride - 0.5


def _gaussian(out_size, cx: int, cy: int, sigma: float) -> np.ndarray:
    h, w = out_size
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma ** 2))


def _round(v: float) -> int:
    return int(np.floor(v + 0.5))


def render_gt_heatmaps(
    instance: InstanceAnnotation,
    skeleton: SkeletonSpec,
    out_size: Sequence[int],
    sigma: float = 2.0,
    stride: int = 1,
) -> Heatmap:
    """Render one Gaussian channel per joint with a peak of exactly 1.0.

    Keypoint coordinates must already be in heatmap scale. Unlabeled joints and
    joints that round to a location outside the map give an all-zero channel;
    the latter are listed in ``Heatmap.out_of_bounds``.
    """
    h, w = int(out_size[0]), int(out_size[1])
    if h <= 0 or w <= 0:
        raise ValueError(f"out_size must be positive, got {out_size}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if instance.num_joints != skeleton.m:
        raise ValueError(f"instance has {instance.num_joints} joints, skeleton has {skeleton.m}")
    values = np.zeros((skeleton.m, h, w), dtype=np.float64)
    dropped = []
    for j, (x, y, v) in enumerate(instance.keypoints):
        if v <= 0:
            continue
        cx, cy = _round(x), _round(y)
        if not (0 <= cx < w and 0 <= cy < h):
            dropped.append(j)
            continue
        values[j] = _gaussian((h, w), cx, cy, sigma)
    return Heatmap(values, stride, tuple(dropped))


def render_center_heatmap(centers, out_size: Sequence[int], sigma: float = 2.0) -> np.ndarray:
    """Single-channel map with a unit Gaussian peak at each (heatmap-scale) center."""
    h, w = int(out_size[0]), int(out_size[1])
    out = np.zeros((1, h, w), dtype=np.float64)
    for x, y in centers:
        cx, cy = _round(x), _round(y)
        if 0 <= cx < w and 0 <= cy < h:
            np.maximum(out[0], _gaussian((h, w), cx, cy, sigma), out=out[0])
    return out


def merge_heatmaps(heatmaps: Sequence[Heatmap]) -> Heatmap:
    """Element-wise maximum over several instances' heatmaps."""
    if not heatmaps:
        raise ValueError("nothing to merge")
    values = np.maximum.reduce([hm.values for hm in heatmaps])
    return Heatmap(values, heatmaps[0].stride)
