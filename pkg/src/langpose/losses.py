"""Text-image similarity maps and the five training objectives."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn.functional as F

from .ops import sample_points

COMPONENTS = ("contrastive", "heatmap", "instance_prompt", "keypoint_prompt", "pixel_prompt")
FOCAL_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    contrastive: float = 1.0
    heatmap: float = 1.0
    instance_prompt: float = 1.0
    keypoint_prompt: float = 1.0
    pixel_prompt: float = 1.0

    def __post_init__(self):
        for name in COMPONENTS:
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    def as_tuple(self):
        return tuple(getattr(self, n) for n in COMPONENTS)

    @classmethod
    def from_sequence(cls, values):
        return cls(*[float(v) for v in values])


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("focal alpha and beta must be positive")


class NonFiniteLossError(FloatingPointError):
    pass


# -- similarity maps ---------------------------------------------------------

def instance_similarity_map(F_img: torch.Tensor, J_ins: torch.Tensor) -> torch.Tensor:
    """Per-pixel inner product: (C, H, W) x (C,) -> (H, W); batched over a leading N."""
    if F_img.dim() == 3:
        return torch.einsum("chw,c->hw", F_img, J_ins)
    return torch.einsum("nchw,nc->nhw", F_img, J_ins)


def sample_keypoint_features(F_ins_i: torch.Tensor, joints: torch.Tensor, visibility=None):
    """Bilinear samples of ``F_ins_i`` (C, H, W) at ``joints`` (m, 2), renormalized.

    Returns ``(features (m, C), valid (m,))``; joints with visibility 0 give a
    zero row and ``valid = False``.
    """
    m = joints.shape[0]
    valid = torch.ones(m, dtype=torch.bool) if visibility is None else torch.as_tensor(visibility) > 0
    feats = sample_points(F_ins_i.unsqueeze(0), joints.unsqueeze(0))[0]
    feats = feats / feats.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    return feats * valid.unsqueeze(-1).to(feats.dtype), valid


def keypoint_similarity(F_keypoint: torch.Tensor, J_keypoint: torch.Tensor) -> torch.Tensor:
    return F_keypoint @ J_keypoint.transpose(-1, -2)


def pixel_similarity(F_ins_i: torch.Tensor, J_keypoint: torch.Tensor) -> torch.Tensor:
    """logistic(<F_ins(:, x, y), J_j>): (C, H, W) x (m, C) -> (m, H, W); batched over N."""
    if F_ins_i.dim() == 3:
        return torch.sigmoid(torch.einsum("chw,mc->mhw", F_ins_i, J_keypoint))
    return torch.sigmoid(torch.einsum("nchw,mc->nmhw", F_ins_i, J_keypoint))


# -- losses ------------------------------------------------------------------

def contrastive_instance_loss(f: torch.Tensor, tau: float = 0.5, literal_norms: bool = False) -> torch.Tensor:
    """InfoNCE over one image's instance center features (N, C).

    Rows are normalized first so only pairwise cosines matter. ``literal_norms``
    uses products of row norms in place of inner products (kept for comparison).
    """
    norms = f.norm(dim=1)
    keep = norms != 0
    if not bool(keep.all()):
        warnings.warn("zero-norm instance feature excluded from contrastive loss")
        f, norms = f[keep], norms[keep]
    if f.shape[0] == 0:
        return f.new_zeros(())
    if literal_norms:
        logits = torch.outer(norms, norms) / tau
    else:
        u = f / norms.unsqueeze(1)
        logits = u @ u.T / tau
    return (torch.logsumexp(logits, dim=1) - logits.diagonal()).mean()


def focal_heatmap_loss(p: torch.Tensor, h_gt: torch.Tensor, params: FocalParams = FocalParams()) -> torch.Tensor:
    """Penalty-reduced pixel-wise focal loss normalized by the number of peaks (floor 1)."""
    if p.shape != h_gt.shape:
        raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(h_gt.shape)}")
    p = p.clamp(FOCAL_EPS, 1 - FOCAL_EPS)
    pos = h_gt == 1
    pos_term = (1 - p).pow(params.alpha) * torch.log(p)
    neg_term = (1 - h_gt).pow(params.beta) * p.pow(params.alpha) * torch.log(1 - p)
    total = torch.where(pos, pos_term, neg_term).sum()
    n_pos = max(int(pos.sum()), 1)
    return -total / n_pos


def instance_prompt_loss(S_ins: torch.Tensor, F_sc_reduced: torch.Tensor) -> torch.Tensor:
    if S_ins.numel() == 0:
        return S_ins.new_zeros(())
    return (S_ins - F_sc_reduced).pow(2).mean()


def keypoint_prompt_loss(S_keypoint: torch.Tensor, tau_k: float = 0.07, valid=None) -> torch.Tensor:
    """Symmetric cross-entropy of an (m, m) joint similarity matrix against the identity matching.

    Invalid joints are removed from both rows and columns before the softmax.
    """
    m = S_keypoint.shape[-1]
    if valid is not None:
        idx = torch.nonzero(torch.as_tensor(valid), as_tuple=True)[0]
        S_keypoint = S_keypoint[idx][:, idx]
        m = idx.numel()
    if m == 0:
        return S_keypoint.new_zeros(())
    logits = S_keypoint / tau_k
    target = torch.arange(m)
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))


def pixel_prompt_loss(S_pixel: torch.Tensor, h_gt: torch.Tensor) -> torch.Tensor:
    if S_pixel.numel() == 0:
        return S_pixel.new_zeros(())
    return (S_pixel - h_gt).pow(2).mean()


def total_loss(components: Dict[str, torch.Tensor], weights: LossWeights = LossWeights()) -> torch.Tensor:
    total = None
    for name in COMPONENTS:
        value = components[name]
        if not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise NonFiniteLossError(f"loss component {name!r} is not finite: {float(torch.as_tensor(value).detach())}")
        term = getattr(weights, name) * value
        total = term if total is None else total + term
    return total


# -- batch-level objective ---------------------------------------------------

def _per_instance_focal(p, h_gt, params: FocalParams):
    """Focal loss of each leading-axis slice: (K, ...) -> (K,)."""
    p = p.clamp(FOCAL_EPS, 1 - FOCAL_EPS)
    pos = h_gt == 1
    pos_term = (1 - p).pow(params.alpha) * torch.log(p)
    neg_term = (1 - h_gt).pow(params.beta) * p.pow(params.alpha) * torch.log(1 - p)
    dims = tuple(range(1, p.dim()))
    total = torch.where(pos, pos_term, neg_term).sum(dims)
    n_pos = pos.sum(dims).clamp_min(1).to(p.dtype)
    return -total / n_pos


def _per_instance_keypoint(S: torch.Tensor, tau_k: float, valid: torch.Tensor) -> torch.Tensor:
    """Masked symmetric cross-entropy for a stack of (m, m) matrices: (N, m, m) -> (N,)."""
    logits = S / tau_k
    pair = valid[:, :, None] & valid[:, None, :]
    masked = logits.masked_fill(~pair, float("-inf"))
    diag = logits.diagonal(dim1=1, dim2=2)
    row = torch.logsumexp(masked, dim=2) - diag
    col = torch.logsumexp(masked, dim=1) - diag
    per_joint = torch.where(valid, 0.5 * (row + col), torch.zeros_like(diag))
    count = valid.sum(1)
    return per_joint.sum(1) / count.clamp_min(1).to(S.dtype)


def _segment_mean(values: torch.Tensor, index: torch.Tensor, groups: int):
    sums = values.new_zeros(groups).index_add(0, index, values)
    counts = torch.bincount(index, minlength=groups).to(values.dtype)
    return sums / counts.clamp_min(1), counts > 0


def batch_losses(out: dict, targets: dict, *, tau: float = 0.5, tau_k: float = 0.07,
                 focal: FocalParams = FocalParams(), literal_norms: bool = False) -> Dict[str, torch.Tensor]:
    """All five components for a batch: per-image means over instances, then mean over images.

    ``targets`` carries ``image_index`` (N,), ``heatmaps`` (N, m, H, W),
    ``center_heatmaps`` (B, H, W), ``joint_valid`` (N, m) and ``batch_size``.
    The center-map focal loss is folded into the heatmap component. Images
    without instances only contribute to the center-map term.
    """
    image_index = targets["image_index"]
    h_gt = targets["heatmaps"]
    valid = targets["joint_valid"]
    batch = targets["batch_size"]
    center = _per_instance_focal(out["center_heatmap"], targets["center_heatmaps"], focal)
    zero = center.sum() * 0

    def image_mean(per_instance):
        means, has = _segment_mean(per_instance, image_index, batch)
        return means[has].mean() if bool(has.any()) else zero

    fl, has = _segment_mean(_per_instance_focal(out["heatmaps"], h_gt, focal), image_index, batch)
    heatmap = (center + fl).mean()

    con = []
    for b in range(batch):
        sel = torch.nonzero(image_index == b, as_tuple=True)[0]
        if sel.numel():
            con.append(contrastive_instance_loss(out["f"][sel], tau, literal_norms))
    return {
        "contrastive": torch.stack(con).mean() if con else zero,
        "heatmap": heatmap,
        "instance_prompt": image_mean((out["S_ins"] - out["F_sc_reduced"]).pow(2).flatten(1).mean(1)),
        "keypoint_prompt": image_mean(_per_instance_keypoint(out["S_keypoint"], tau_k, valid)),
        "pixel_prompt": image_mean((out["S_pixel"] - h_gt).pow(2).flatten(1).mean(1)),
    }
