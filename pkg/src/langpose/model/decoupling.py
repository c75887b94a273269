"""Instance decoupling: center sampling, instance masks and the two recalibrations."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from ..ops import CenterClampWarning, bilinear_sample


def sample_instance_features(F_map: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
    """``F_map``: (C, H, W) shared map or (N, C, H, W) per-instance maps."""
    n = centers.shape[0]
    if F_map.dim() == 3:
        F_map = F_map.unsqueeze(0).expand(n, *F_map.shape)
    return bilinear_sample(F_map, centers)


def compute_instance_mask(F_map: torch.Tensor, f: torch.Tensor, gamma) -> torch.Tensor:
    """logistic(gamma * cos(F(:, x, y), f_i)); a zero-norm pixel has cosine 0.

    ``F_map``: (N, C, H, W) or (C, H, W); ``f``: (N, C) -> (N, H, W).
    """
    if F_map.dim() == 3:
        F_map = F_map.unsqueeze(0)
    eps = 1e-12
    dot = torch.einsum("nchw,nc->nhw", F_map, f)
    fn = F_map.pow(2).sum(1).clamp_min(eps).sqrt()
    gn = f.pow(2).sum(1).clamp_min(eps).sqrt()
    cos = dot / (fn * gn[:, None, None])
    return torch.sigmoid(gamma * cos)


def spatial_recalibration(F_map: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    """F * M_i broadcast over channels: (N, C, H, W) x (N, H, W)."""
    return F_map * M.unsqueeze(-3)


def channel_recalibration(F_map: torch.Tensor, f: torch.Tensor, gated: bool = True) -> torch.Tensor:
    """F scaled per channel by logistic(f_i): (N, C, H, W) x (N, C)."""
    scale = torch.sigmoid(f) if gated else f
    return F_map * scale[..., None, None]


def gaussian_center_mask(h: int, w: int, centers: torch.Tensor, sigma: float) -> torch.Tensor:
    ys = torch.arange(h, dtype=centers.dtype, device=centers.device)[None, :, None]
    xs = torch.arange(w, dtype=centers.dtype, device=centers.device)[None, None, :]
    d2 = (xs - centers[:, 0, None, None]) ** 2 + (ys - centers[:, 1, None, None]) ** 2
    # strictly inside (0, 1)
    return 1e-6 + (1 - 2e-6) * torch.exp(-d2 / (2 * sigma ** 2))


class InstanceDecoupling(nn.Module):
    """Splits a shared feature map into per-instance maps via spatial and channel attention."""

    def __init__(self, in_channels: int, out_channels: int, mask_mode: str = "cosine",
                 channel_gate: bool = True, gamma_init: float = 5.0, mask_sigma: float = 4.0):
        super().__init__()
        if mask_mode not in ("cosine", "gaussian"):
            raise ValueError(f"unknown mask mode {mask_mode!r}")
        self.mask_mode = mask_mode
        self.channel_gate = channel_gate
        self.mask_sigma = mask_sigma
        self.log_gamma = nn.Parameter(torch.tensor(math.log(gamma_init)))
        self.fuse = nn.Conv2d(2 * in_channels, out_channels, 1)

    @property
    def gamma(self) -> torch.Tensor:
        return self.log_gamma.exp()

    def fuse_recalibrations(self, F_s: torch.Tensor, F_c: torch.Tensor) -> torch.Tensor:
        return F.relu(self.fuse(torch.cat([F_s, F_c], dim=1)))

    def forward(self, F_map: torch.Tensor, centers: torch.Tensor, image_index: torch.Tensor):
        """``F_map``: (B, C, H, W); ``centers``: (N, 2) heatmap-scale (x, y);
        ``image_index``: (N,) image of each instance.

        Returns a dict with ``f``, ``M``, ``F_s``, ``F_c``, ``F_sc``.
        """
        F_inst = F_map[image_index]
        f = sample_instance_features(F_inst, centers)
        if self.mask_mode == "cosine":
            M = compute_instance_mask(F_inst, f, self.gamma)
        else:
            M = gaussian_center_mask(F_map.shape[-2], F_map.shape[-1], centers, self.mask_sigma)
        F_s = spatial_recalibration(F_inst, M)
        F_c = channel_recalibration(F_inst, f, self.channel_gate)
        F_sc = self.fuse_recalibrations(F_s, F_c)
        return {"f": f, "M": M, "F_s": F_s, "F_c": F_c, "F_sc": F_sc}
