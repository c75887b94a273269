"""Joint image/annotation affine augmentation and test-time resizing."""
from __future__ import annotations

import math
from typing import Optional, Tuple

import cv2
import numpy as np

from ..types import InstanceAnnotation, SceneSample


def _h(m2x3: np.ndarray) -> np.ndarray:
    return np.vstack([m2x3, [0.0, 0.0, 1.0]])


def apply_affine(matrix: np.ndarray, xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64)
    return xy @ matrix[:, :2].T + matrix[:, 2]


def augmentation_matrix(image_size, out_size, angle_deg: float, scale: float, translate) -> np.ndarray:
    """Source pixel coords -> output pixel coords (continuous, pixel ``i`` spans [i, i+1)).

    Resize to ``out_size``, then rotate/scale about the output center, then shift.
    """
    H, W = image_size
    oh, ow = out_size
    resize = np.diag([ow / W, oh / H, 1.0])
    cx, cy = ow / 2.0, oh / 2.0
    a = math.radians(angle_deg)
    c, s = math.cos(a) * scale, math.sin(a) * scale
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    back = np.array([[1, 0, cx + translate[0]], [0, 1, cy + translate[1]], [0, 0, 1.0]])
    m = back @ rot @ to_origin @ resize
    if not np.all(np.isfinite(m)) or abs(np.linalg.det(m[:2, :2])) < 1e-12:
        m = resize
    return m[:2]


def warp_sample(sample: SceneSample, matrix: np.ndarray, out_size) -> SceneSample:
    """Apply one affine map to the image and every annotation.

    Keypoints leaving the output get visibility 0 (and zero coordinates);
    instances whose center leaves the output, or that keep no labeled
    keypoint, are dropped.
    """
    oh, ow = int(out_size[0]), int(out_size[1])
    shift = np.array([[1, 0, -0.5], [0, 1, -0.5], [0, 0, 1.0]])
    unshift = np.array([[1, 0, 0.5], [0, 1, 0.5], [0, 0, 1.0]])
    m_cv = (shift @ _h(matrix) @ unshift)[:2]
    hwc = np.ascontiguousarray(sample.image.transpose(1, 2, 0), dtype=np.float32)
    warped = cv2.warpAffine(hwc, m_cv, (ow, oh), flags=cv2.INTER_LINEAR,
                            borderMode=cv2.BORDER_CONSTANT, borderValue=(0, 0, 0))
    image = np.clip(warped, 0.0, 1.0).transpose(2, 0, 1)

    det = abs(np.linalg.det(matrix[:, :2]))
    instances = []
    for inst in sample.instances:
        kp = inst.keypoints.copy()
        kp[:, :2] = apply_affine(matrix, kp[:, :2])
        inside = (kp[:, 0] >= 0) & (kp[:, 0] < ow) & (kp[:, 1] >= 0) & (kp[:, 1] < oh)
        gone = (kp[:, 2] > 0) & ~inside
        kp[gone] = 0.0
        kp[kp[:, 2] == 0, :2] = 0.0
        cx, cy = apply_affine(matrix, np.array([inst.center]))[0]
        if not (0 <= cx < ow and 0 <= cy < oh) or not np.any(kp[:, 2] > 0):
            continue
        x, y, w, h = inst.bbox
        corners = apply_affine(matrix, np.array([[x, y], [x + w, y], [x, y + h], [x + w, y + h]]))
        x0, y0 = np.clip(corners.min(0), 0, [ow, oh])
        x1, y1 = np.clip(corners.max(0), 0, [ow, oh])
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            continue
        area = None if inst.area is None else inst.area * det
        instances.append(InstanceAnnotation(kp, (x0, y0, x1 - x0, y1 - y0), (cx, cy), area))

    prev = _h(sample.affine) if sample.affine is not None else np.eye(3)
    return SceneSample(image, instances, sample.sample_id, affine=(_h(matrix) @ prev)[:2],
                       crowd_index=sample.crowd_index, meta=dict(sample.meta))


def augment(sample: SceneSample, rotation_max: float = 30.0, scale_range=(0.75, 1.5),
            translate_max: float = 0.1, rng: Optional[np.random.Generator] = None,
            out_size: Tuple[int, int] = (512, 512)) -> SceneSample:
    """Random rotation, scale jitter and translation, resized to ``out_size``."""
    rng = rng if rng is not None else np.random.default_rng()
    angle = rng.uniform(-rotation_max, rotation_max) if rotation_max > 0 else 0.0
    lo, hi = scale_range
    scale = rng.uniform(lo, hi) if hi > lo else float(lo)
    if not scale > 0:
        scale = 1.0
    oh, ow = out_size
    if translate_max > 0:
        t = rng.uniform(-translate_max, translate_max, size=2) * np.array([ow, oh])
    else:
        t = np.zeros(2)
    matrix = augmentation_matrix(sample.image_size, out_size, angle, scale, t)
    return warp_sample(sample, matrix, out_size)


def resize_for_inference(sample: SceneSample, short_side: Optional[int], stride: int):
    """Scale so the short side is ``short_side`` (keeping aspect), pad to a multiple of ``stride``.

    Returns ``(resized_sample, scale)`` where ``scale`` maps resized pixel
    coordinates back to the original: ``original = resized * scale``.
    """
    H, W = sample.image_size
    f = 1.0 if short_side is None else short_side / min(H, W)
    nh, nw = int(round(H * f)), int(round(W * f))
    ph, pw = -(-nh // stride) * stride, -(-nw // stride) * stride
    if (nh, nw) == (H, W) and (ph, pw) == (H, W):
        return sample, 1.0
    fx, fy = nw / W, nh / H
    matrix = np.array([[fx, 0, 0], [0, fy, 0]], dtype=np.float64)
    out = warp_sample(sample, matrix, (ph, pw))
    return out, 1.0 / fx
