"""Crowded stick-figure scenes with exact keypoint, box and occlusion labels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from PIL import Image, ImageDraw

from ..types import SYNTHETIC_SKELETON, InstanceAnnotation, SceneSample, SkeletonSpec

MAX_PLACEMENT_ATTEMPTS = 200
MAX_LAYOUTS = 10


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticSceneConfig:
    num_instances_range: Tuple[int, int] = (2, 3)
    overlap_probability: float = 0.5
    occlusion_fraction_range: Tuple[float, float] = (0.05, 0.6)
    image_size: Tuple[int, int] = (64, 64)
    skeleton: SkeletonSpec = SYNTHETIC_SKELETON
    seed: int = 0
    figure_height_range: Tuple[float, float] = (0.55, 0.8)
    min_center_distance: float = 10.0

    def __post_init__(self):
        lo, hi = self.num_instances_range
        if not (0 <= lo <= hi):
            raise ValueError(f"bad num_instances_range {self.num_instances_range}")
        if not (0.0 <= self.overlap_probability <= 1.0):
            raise ValueError("overlap_probability must lie in [0, 1]")
        olo, ohi = self.occlusion_fraction_range
        if not (0.0 <= olo <= ohi <= 1.0):
            raise ValueError(f"bad occlusion_fraction_range {self.occlusion_fraction_range}")
        flo, fhi = self.figure_height_range
        if not (0.0 < flo <= fhi <= 1.0):
            raise ValueError(f"bad figure_height_range {self.figure_height_range}")
        if min(self.image_size) <= 0:
            raise ValueError("image_size must be positive")
        object.__setattr__(self, "num_instances_range", (int(lo), int(hi)))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))


def _rot(v, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _figure_joints(rng: np.random.Generator, height: float) -> Dict[str, np.ndarray]:
    """Named joint positions relative to the pelvis, image axes (y down).

    "left" joints are the figure's own left, drawn on the image right.
    """
    h = height
    lean = rng.uniform(-0.2, 0.2)
    up = _rot(np.array([0.0, -1.0]), lean)
    side = _rot(np.array([1.0, 0.0]), lean)
    pelvis = np.zeros(2)
    neck = pelvis + 0.32 * h * up
    j = {"neck": neck}
    j["left shoulder"] = neck + 0.12 * h * side
    j["right shoulder"] = neck - 0.12 * h * side
    j["left hip"] = pelvis + 0.08 * h * side
    j["right hip"] = pelvis - 0.08 * h * side
    j["head"] = neck + 0.12 * h * up
    j["nose"] = neck + 0.10 * h * up + rng.uniform(-0.02, 0.02) * h * side
    j["left eye"] = j["nose"] + 0.03 * h * up + 0.025 * h * side
    j["right eye"] = j["nose"] + 0.03 * h * up - 0.025 * h * side
    j["left ear"] = j["nose"] + 0.01 * h * up + 0.05 * h * side
    j["right ear"] = j["nose"] + 0.01 * h * up - 0.05 * h * side
    down = -up
    for s, sign in (("left", 1.0), ("right", -1.0)):
        a1 = rng.uniform(-0.3, 2.2) * sign
        a2 = a1 + rng.uniform(-0.4, 1.4) * sign
        j[f"{s} elbow"] = j[f"{s} shoulder"] + 0.17 * h * _rot(down, -a1)
        j[f"{s} wrist"] = j[f"{s} elbow"] + 0.15 * h * _rot(down, -a2)
        l1 = rng.uniform(-0.05, 0.5) * sign
        l2 = l1 + rng.uniform(-0.3, 0.1) * sign
        j[f"{s} knee"] = j[f"{s} hip"] + 0.24 * h * _rot(down, -l1)
        j[f"{s} ankle"] = j[f"{s} knee"] + 0.23 * h * _rot(down, -l2)
    return j


def _joint_palette(m: int) -> np.ndarray:
    hues = np.arange(m) / m
    # simple HSV -> RGB at full saturation and value
    k = (np.array([5.0, 3.0, 1.0])[None, :] + hues[:, None] * 6) % 6
    rgb = 1 - np.clip(np.minimum(k, 4 - k), 0, 1)
    return (rgb * 255).astype(np.uint8)


def _draw_figure(draw: ImageDraw.ImageDraw, mask_draw: ImageDraw.ImageDraw, joints: Dict[str, np.ndarray],
                 skeleton: SkeletonSpec, height: float, body_color, palette):
    width = max(2, int(round(0.06 * height)))
    marker = max(1.5, 0.035 * height)

    def line(a, b, color):
        pts = [tuple(joints[a]), tuple(joints[b])]
        draw.line(pts, fill=color, width=width)
        mask_draw.line(pts, fill=255, width=width)

    body = tuple(int(c) for c in body_color)
    left = tuple(int(min(255, c * 0.6 + 100)) for c in body_color)
    right = tuple(int(c * 0.5) for c in body_color)
    torso = [tuple(joints[k]) for k in ("left shoulder", "right shoulder", "right hip", "left hip")]
    draw.polygon(torso, fill=body)
    mask_draw.polygon(torso, fill=255)
    line("neck", "head", body)
    r = 0.07 * height
    hx, hy = joints["head"]
    draw.ellipse([hx - r, hy - r, hx + r, hy + r], fill=body)
    mask_draw.ellipse([hx - r, hy - r, hx + r, hy + r], fill=255)
    for s, color in (("left", left), ("right", right)):
        line(f"{s} shoulder", f"{s} elbow", color)
        line(f"{s} elbow", f"{s} wrist", color)
        line(f"{s} hip", f"{s} knee", color)
        line(f"{s} knee", f"{s} ankle", color)
    for idx, name in enumerate(skeleton.joint_names):
        x, y = joints[name]
        box = [x - marker, y - marker, x + marker, y + marker]
        draw.ellipse(box, fill=tuple(int(c) for c in palette[idx]))
        mask_draw.ellipse(box, fill=255)


def _background(rng, h, w) -> np.ndarray:
    base = rng.uniform(0.2, 0.8, size=3)
    gx, gy = rng.uniform(-0.2, 0.2, size=2)
    ys = np.linspace(-0.5, 0.5, h)[:, None]
    xs = np.linspace(-0.5, 0.5, w)[None, :]
    img = base[:, None, None] + gx * xs[None] + gy * ys[None]
    img = img + rng.normal(0.0, 0.02, size=(3, h, w))
    return np.clip(img, 0.0, 1.0)


def _bbox_from_mask(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    return (float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))


def _boxes_intersect(a, b) -> bool:
    return a[0] < b[0] + b[2] and b[0] < a[0] + a[2] and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]


def _render_mask(joints, skeleton, height, size):
    mask = Image.new("L", (size[1], size[0]), 0)
    scratch = Image.new("RGB", (size[1], size[0]))
    _draw_figure(ImageDraw.Draw(scratch), ImageDraw.Draw(mask), joints, skeleton, height,
                 (0, 0, 0), np.zeros((skeleton.m, 3)))
    return np.asarray(mask) > 0


def _covered(mask: np.ndarray, xy) -> bool:
    x, y = int(math.floor(xy[0])), int(math.floor(xy[1]))
    return 0 <= y < mask.shape[0] and 0 <= x < mask.shape[1] and bool(mask[y, x])


def _place_figures(config: SyntheticSceneConfig, rng: np.random.Generator, n: int):
    """One layout try; ``None`` when some figure found no valid spot."""
    H, W = config.image_size
    skel = config.skeleton
    placed = []  # dicts: joints (abs), height, mask, bbox, center
    for k in range(n):
        overlap = k > 0 and rng.uniform() < config.overlap_probability
        for attempt in range(MAX_PLACEMENT_ATTEMPTS):
            height = rng.uniform(*config.figure_height_range) * H
            if not overlap:
                # crowded canvases: shrink side-by-side figures as attempts run out
                height *= 1.0 - 0.65 * attempt / MAX_PLACEMENT_ATTEMPTS
            rel = _figure_joints(rng, height)
            if overlap:
                target = placed[int(rng.integers(len(placed)))]
                anchor_name = skel.joint_names[int(rng.integers(skel.m))]
                anchor = target["joints"][anchor_name]
                pelvis = anchor - rel[["neck", "left hip", "right hip", "left shoulder"][int(rng.integers(4))]]
                pelvis = pelvis + rng.uniform(-0.08, 0.08, size=2) * height
            else:
                # sample the pelvis where the whole figure fits inside the margins
                rp = np.array([rel[nm] for nm in skel.joint_names] + [rel["head"]])
                lo_xy = 0.08 * height - rp.min(0)
                hi_xy = np.array([W - 1, H - 1]) - 0.08 * height - rp.max(0)
                if np.any(hi_xy < lo_xy):
                    continue
                pelvis = rng.uniform(lo_xy, hi_xy)
            joints = {name: p + pelvis for name, p in rel.items()}
            pts = np.array([joints[nm] for nm in skel.joint_names] + [joints["head"]])
            margin = 0.08 * height
            if pts[:, 0].min() < margin or pts[:, 1].min() < margin:
                continue
            if pts[:, 0].max() > W - 1 - margin or pts[:, 1].max() > H - 1 - margin:
                continue
            kp = np.array([joints[nm] for nm in skel.joint_names])
            center = kp.mean(axis=0)
            if any(np.linalg.norm(center - np.asarray(p["center"])) < config.min_center_distance for p in placed):
                continue
            mask = _render_mask(joints, skel, height, (H, W))
            if not mask.any():
                continue
            bbox = _bbox_from_mask(mask)
            if overlap:
                hidden = np.array([_covered(mask, target["joints"][nm]) for nm in skel.joint_names])
                frac = hidden.mean()
                lo, hi = config.occlusion_fraction_range
                if not hidden.any() or not (lo <= frac <= hi):
                    continue
            elif any(_boxes_intersect(bbox, p["bbox"]) for p in placed):
                continue
            placed.append({"joints": joints, "height": height, "mask": mask, "bbox": bbox,
                           "center": tuple(center)})
            break
        else:
            return None
    return placed


def generate_synthetic_scene(config: SyntheticSceneConfig, index: int) -> SceneSample:
    """Deterministic in ``(config.seed, index)``.

    Figures are drawn in order; a figure drawn later hides the keypoints of
    earlier ones it covers (those get visibility 1). When a figure is chosen
    to overlap, it is placed over an earlier figure so that some of that
    figure's keypoints end up hidden.
    """
    rng = np.random.default_rng([int(config.seed), int(index)])
    H, W = config.image_size
    skel = config.skeleton
    missing = [n for n in skel.joint_names if n not in _figure_joints(np.random.default_rng(0), 1.0)]
    if missing:
        raise ValueError(f"synthetic figures have no joints named {missing}")
    palette = _joint_palette(skel.m)
    n = int(rng.integers(config.num_instances_range[0], config.num_instances_range[1] + 1))

    for _ in range(MAX_LAYOUTS):
        placed = _place_figures(config, rng, n)
        if placed is not None:
            break
    else:
        raise PlacementError(f"could not lay out {n} figures in scene {index} after {MAX_LAYOUTS} tries")

    bg = _background(rng, H, W)
    canvas = Image.fromarray((bg.transpose(1, 2, 0) * 255).round().astype(np.uint8))
    draw = ImageDraw.Draw(canvas)
    scratch = ImageDraw.Draw(Image.new("L", (W, H)))
    instances = []
    for fig in placed:
        color = rng.uniform(40, 230, size=3)
        _draw_figure(draw, scratch, fig["joints"], skel, fig["height"], color, palette)
    for k, fig in enumerate(placed):
        later = [p["mask"] for p in placed[k + 1:]]
        kps = np.zeros((skel.m, 3))
        for j, nm in enumerate(skel.joint_names):
            xy = fig["joints"][nm]
            hidden = any(_covered(mk, xy) for mk in later)
            kps[j] = (xy[0], xy[1], 1 if hidden else 2)
        instances.append(InstanceAnnotation(kps, fig["bbox"], fig["center"]))
    image = np.asarray(canvas, dtype=np.float32).transpose(2, 0, 1) / 255.0
    return SceneSample(image, instances, sample_id=f"synthetic-{config.seed}-{index}",
                       meta={"figure_masks": [p["mask"] for p in placed]})

