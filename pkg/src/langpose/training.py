"""Batch assembly, the optimization loop and center-driven inference."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from .evaluation import PredictedPose, decode_keypoints
from .losses import COMPONENTS, FocalParams, LossWeights, NonFiniteLossError, batch_losses, total_loss
from .model import LanguagePoseNet, local_maxima
from .prompts import PromptTemplateConfig, instance_prompts, joint_prompt_vocabulary
from .types import (
    InstanceAnnotation,
    SceneSample,
    SkeletonSpec,
    image_to_heatmap_coords,
    render_center_heatmap,
    render_gt_heatmaps,
)

logger = logging.getLogger(__name__)


class TextCache:
    """Memoizes frozen-encoder outputs; the encoder never sees gradients."""

    def __init__(self, encoder):
        self.encoder = encoder
        self._cache: Dict[str, np.ndarray] = {}

    def __call__(self, texts: Sequence[str], dtype=torch.float32) -> torch.Tensor:
        new = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if new:
            with torch.no_grad():
                for t, v in zip(new, self.encoder.encode(new)):
                    self._cache[t] = np.asarray(v, dtype=np.float64)
        if not texts:
            return torch.zeros((0, getattr(self.encoder, "embedding_dim", 0)), dtype=dtype)
        return torch.as_tensor(np.stack([self._cache[t] for t in texts]), dtype=dtype)


@dataclass
class SampleTargets:
    image: np.ndarray
    centers: np.ndarray  # (N, 2) heatmap coords
    joints: np.ndarray  # (N, m, 2) heatmap coords
    joint_valid: np.ndarray  # (N, m)
    heatmaps: np.ndarray  # (N, m, h, w)
    center_heatmap: np.ndarray  # (h, w)
    prompts: List[str]


def sample_targets(sample: SceneSample, skeleton: SkeletonSpec, stride: int, sigma: float,
                   prompt_config: PromptTemplateConfig, center_sigma: Optional[float] = None) -> SampleTargets:
    """Heatmap-space targets for one sample; ``center_sigma`` defaults to ``sigma``."""
    H, W = sample.image_size
    if H % stride or W % stride:
        raise ValueError(f"image size {(H, W)} of {sample.sample_id!r} is not divisible by stride {stride}")
    h, w = H // stride, W // stride
    n, m = len(sample.instances), skeleton.m
    centers = np.zeros((n, 2))
    joints = np.zeros((n, m, 2))
    valid = np.zeros((n, m), dtype=bool)
    heat = np.zeros((n, m, h, w))
    for i, inst in enumerate(sample.instances):
        kp = inst.keypoints.copy()
        kp[:, :2] = image_to_heatmap_coords(kp[:, :2], stride)
        hm = render_gt_heatmaps(InstanceAnnotation(kp, inst.bbox, inst.center), skeleton, (h, w), sigma, stride)
        heat[i] = hm.values
        joints[i] = kp[:, :2]
        valid[i] = kp[:, 2] > 0
        valid[i, list(hm.out_of_bounds)] = False
        c = image_to_heatmap_coords(inst.center, stride)
        centers[i] = np.clip(c, 0, [w - 1, h - 1])
    center_hm = render_center_heatmap(centers, (h, w), sigma if center_sigma is None else center_sigma)[0]
    prompts = instance_prompts(sample.instances, (H, W), prompt_config)
    return SampleTargets(np.asarray(sample.image, dtype=np.float64), centers, joints, valid, heat,
                         center_hm, prompts)


def collate(targets: Sequence[SampleTargets], text: TextCache, joint_text: torch.Tensor, dtype=torch.float32):
    image_index = np.concatenate([np.full(len(t.prompts), b) for b, t in enumerate(targets)]).astype(np.int64)
    prompts = [p for t in targets for p in t.prompts]
    m = joint_text.shape[0]

    def cat(name, shape):
        arrs = [getattr(t, name) for t in targets]
        return np.concatenate(arrs) if arrs else np.zeros(shape)

    h, w = targets[0].center_heatmap.shape
    inputs = {
        "images": torch.as_tensor(np.stack([t.image for t in targets]), dtype=dtype),
        "centers": torch.as_tensor(cat("centers", (0, 2)), dtype=dtype),
        "image_index": torch.as_tensor(image_index),
        "instance_text": text(prompts, dtype),
        "joint_text": joint_text.to(dtype),
        "joints": torch.as_tensor(cat("joints", (0, m, 2)), dtype=dtype),
        "joint_valid": torch.as_tensor(cat("joint_valid", (0, m))).bool(),
    }
    tgt = {
        "image_index": inputs["image_index"],
        "heatmaps": torch.as_tensor(cat("heatmaps", (0, m, h, w)), dtype=dtype),
        "center_heatmaps": torch.as_tensor(np.stack([t.center_heatmap for t in targets]), dtype=dtype),
        "joint_valid": inputs["joint_valid"],
        "batch_size": len(targets),
    }
    return inputs, tgt


@dataclass
class TrainSettings:
    steps: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-3
    lr_decay_steps: Optional[int] = None
    lr_decay_gamma: float = 0.1
    weights: LossWeights = LossWeights()
    focal: FocalParams = FocalParams()
    tau: float = 0.5
    tau_k: float = 0.07
    literal_norms: bool = False
    sigma: float = 2.0
    seed: int = 0
    log_every: int = 1


def loss_step(model, inputs, tgt, settings: TrainSettings):
    out = model(**inputs)
    comps = batch_losses(out, tgt, tau=settings.tau, tau_k=settings.tau_k, focal=settings.focal,
                         literal_norms=settings.literal_norms)
    return total_loss(comps, settings.weights), comps, out


def run_training(model: LanguagePoseNet, batch_fn: Callable[[np.ndarray], tuple], num_samples: int,
                 settings: TrainSettings, log_fn: Optional[Callable[[dict], None]] = None):
    """Adam over shuffled mini-batches.

    ``batch_fn(indices)`` returns ``(inputs, targets)``. Returns
    ``(history, best_state, best_loss)``. On a non-finite loss the model is
    restored to its last good state before the error propagates.
    """
    if settings.steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(settings.seed)
    opt = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
    sched = None
    if settings.lr_decay_steps:
        sched = torch.optim.lr_scheduler.StepLR(opt, settings.lr_decay_steps, settings.lr_decay_gamma)
    history = []
    params = list(model.state_dict().values())
    last_good = [t.detach().clone() for t in params]
    best = [t.detach().clone() for t in params]
    best_loss = float("inf")
    order = np.empty(0, dtype=np.int64)
    model.train()
    for step in range(1, settings.steps + 1):
        if len(order) < min(settings.batch_size, num_samples):
            order = np.concatenate([order, rng.permutation(num_samples)])
        idx, order = order[: settings.batch_size], order[settings.batch_size:]
        inputs, tgt = batch_fn(idx)
        try:
            loss, comps, _ = loss_step(model, inputs, tgt, settings)
        except NonFiniteLossError:
            _copy_tensors(params, last_good)
            raise
        _copy_tensors(last_good, params)
        value = float(loss.detach())
        record = {"step": step, "total": value, **{k: float(comps[k].detach()) for k in COMPONENTS}}
        history.append(record)
        if value < best_loss:
            best_loss = value
            _copy_tensors(best, params)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if sched is not None:
            sched.step()
        if log_fn is not None and step % settings.log_every == 0:
            log_fn(record)
    names = list(model.state_dict().keys())
    return history, dict(zip(names, best)), best_loss


@torch.no_grad()
def _copy_tensors(dst, src):
    for d, s in zip(dst, src):
        d.copy_(s)


def loss_records(record: dict):
    """Split a step record into one structured line per component."""
    return [{"step": record["step"], "component": k, "value": record[k]} for k in ("total",) + COMPONENTS]


@torch.no_grad()
def infer_sample(model: LanguagePoseNet, image: np.ndarray, *, center_threshold: float = 0.1,
                 max_instances: int = 20, scale: float = 1.0, dtype=torch.float32):
    """Find instances from the center map, then decode each instance's heatmaps.

    Returns ``(poses, extras)`` where extras holds the center map and the
    per-instance heatmaps and centers for visualization.
    """
    model.eval()
    img = torch.as_tensor(np.asarray(image), dtype=dtype).unsqueeze(0)
    F_map = model.backbone(img)
    center_map = model.center_head(F_map)[0, 0]
    peaks, scores = local_maxima(center_map, center_threshold, max_instances)
    poses: List[PredictedPose] = []
    extras = {"center_heatmap": center_map.numpy(), "centers": peaks.numpy(), "center_scores": scores.numpy()}
    if len(peaks) == 0:
        extras["heatmaps"] = np.zeros((0, model.config.num_joints) + tuple(center_map.shape))
        return poses, extras
    centers = peaks.to(dtype)
    out = model.decouple(F_map, centers, torch.zeros(len(peaks), dtype=torch.long))
    heat = out["heatmaps"].numpy()
    for i in range(len(peaks)):
        poses.append(decode_keypoints(heat[i], model.stride, scale=scale))
    extras["heatmaps"] = heat
    extras["F_sc"] = out["F_sc"]
    return poses, extras
