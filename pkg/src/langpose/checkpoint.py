"""Versioned checkpoint container: named parameter arrays plus JSON metadata in one ``.npz``."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .prompts import PromptTemplateConfig
from .types import SkeletonSpec

FORMAT = "langpose-checkpoint"
VERSION = 1
_PREFIX = "param/"


class CheckpointError(ValueError):
    pass


def _jsonable_params(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, SkeletonSpec):
            v = {"__skeleton__": v.to_dict()}
        elif isinstance(v, PromptTemplateConfig):
            v = {"__prompts__": {"template": v.template, "depth_thresholds": list(v.depth_thresholds),
                                 "occlusion_visible_fraction": v.occlusion_visible_fraction}}
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _restore_params(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, dict) and "__skeleton__" in v:
            v = SkeletonSpec.from_dict(v["__skeleton__"])
        elif isinstance(v, dict) and "__prompts__" in v:
            p = v["__prompts__"]
            v = PromptTemplateConfig(p["template"], tuple(p["depth_thresholds"]), p["occlusion_visible_fraction"])
        elif isinstance(v, list):
            v = tuple(v)
        out[k] = v
    return out


def save_checkpoint(estimator, path, state_dict=None, extra: dict = None) -> Path:
    """Write a fitted estimator; ``state_dict`` overrides the live weights (e.g. the best step)."""
    estimator._check_fitted()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = state_dict if state_dict is not None else estimator.model_.state_dict()
    params = dict(estimator.get_params(deep=False))
    params["log_path"] = None
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "estimator_params": _jsonable_params(params),
        "skeleton": estimator.skeleton_.to_dict(),
        "model_config": estimator.model_.config.to_dict(),
        "extra": extra or {},
    }
    arrays = {_PREFIX + k: v.detach().cpu().numpy() for k, v in state.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    return path


def read_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z:
            raise CheckpointError(f"{path}: not a checkpoint (no metadata)")
        meta = json.loads(bytes(z["__meta__"]).decode())
        arrays = {k[len(_PREFIX):]: z[k] for k in z.files if k.startswith(_PREFIX)}
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r} (expected {VERSION})")
    return meta, arrays


def load_checkpoint(path):
    """Rebuild a fitted :class:`PoseEstimator` from a checkpoint file."""
    from .estimator import PoseEstimator

    meta, arrays = read_checkpoint(path)
    est = PoseEstimator(**_restore_params(meta["estimator_params"]))
    skeleton = SkeletonSpec.from_dict(meta["skeleton"])
    est._build(skeleton)
    expected = est.model_.state_dict()
    missing = sorted(set(expected) - set(arrays))
    unexpected = sorted(set(arrays) - set(expected))
    if missing or unexpected:
        raise CheckpointError(f"{path}: parameter names differ (missing {missing[:5]}, unexpected {unexpected[:5]})")
    for name, t in expected.items():
        if tuple(arrays[name].shape) != tuple(t.shape):
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {arrays[name].shape}, model expects {tuple(t.shape)}"
            )
    est.model_.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    est.model_.eval()
    return est
