"""Skeleton overlays and joint-text heat maps drawn with PIL."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image, ImageDraw

from .evaluation import PredictedPose
from .types import SceneSample, SkeletonSpec

PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 190),
]


def instance_color(i: int):
    return PALETTE[i % len(PALETTE)]


def _to_pil(image: np.ndarray, upscale: int) -> Image.Image:
    arr = (np.clip(np.asarray(image, dtype=np.float64), 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    im = Image.fromarray(arr, "RGB")
    if upscale > 1:
        im = im.resize((im.width * upscale, im.height * upscale), Image.NEAREST)
    return im


def _heat_rgba(heat: np.ndarray, size, alpha: float) -> Image.Image:
    heat = np.clip(np.asarray(heat, dtype=np.float64), 0, 1)
    rgba = np.zeros(heat.shape + (4,), dtype=np.uint8)
    rgba[..., 0] = 255
    rgba[..., 1] = (heat * 160).round().astype(np.uint8)
    rgba[..., 3] = (heat * alpha * 255).round().astype(np.uint8)
    return Image.fromarray(rgba, "RGBA").resize(size, Image.BILINEAR)


def render_overlay(image: np.ndarray, poses: Sequence[PredictedPose], skeleton: SkeletonSpec,
                   heat: Optional[np.ndarray] = None, upscale: int = 4, radius: int = 2,
                   heat_alpha: float = 0.6):
    """Draw every decoded pose (limbs per skeleton edge, then joints) over ``image``.

    Returns ``(PIL image, info)`` where ``info["joints_drawn"]`` counts joint markers.
    """
    canvas = _to_pil(image, upscale).convert("RGBA")
    if heat is not None:
        canvas = Image.alpha_composite(canvas, _heat_rgba(heat, canvas.size, heat_alpha))
    draw = ImageDraw.Draw(canvas)
    joints_drawn = 0
    for i, pose in enumerate(poses):
        color = instance_color(i)
        kp = np.asarray(pose.keypoints, dtype=np.float64)
        xy = kp[:, :2] * upscale
        for a, b in skeleton.edges:
            draw.line([tuple(xy[a]), tuple(xy[b])], fill=color + (255,), width=max(1, upscale // 2))
        for x, y in xy:
            draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=color + (255,),
                         outline=(0, 0, 0, 255))
            joints_drawn += 1
    return canvas.convert("RGB"), {"instances": len(poses), "joints_drawn": joints_drawn}


@torch.no_grad()
def joint_heat_map(estimator, extras: dict, joint: int) -> Optional[np.ndarray]:
    """Max over detected instances of the joint-text score map for ``joint``."""
    if "F_sc" not in extras:
        return None
    model = estimator.model_
    F_ins = model.instance_projection(extras["F_sc"])
    J = estimator.joint_text_[joint: joint + 1].to(F_ins.dtype)
    return torch.sigmoid(torch.einsum("nchw,mc->nmhw", F_ins, J))[:, 0].amax(0).numpy()


def visualize(estimator, sample: SceneSample, out_path, joint: Optional[str] = None, upscale: int = 4) -> dict:
    """Predict on ``sample`` and write the overlay PNG to ``out_path``."""
    skeleton = estimator.skeleton_
    poses, extras = estimator.predict_with_maps(sample)
    heat = None
    if joint is not None:
        if joint not in skeleton.joint_names:
            raise ValueError(f"unknown joint {joint!r}")
        heat = joint_heat_map(estimator, extras, skeleton.joint_names.index(joint))
    out_path = Path(out_path)
    image, info = render_overlay(sample.image, poses, skeleton, heat, upscale)
    image.save(out_path, format="PNG")
    info["path"] = str(out_path)
    return info
