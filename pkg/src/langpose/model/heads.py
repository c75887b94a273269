import math

import torch
import torch.nn.functional as F
from torch import nn

FOCAL_PRIOR = 0.1


class ProjectionHead(nn.Module):
    """Self-attention + FFN over the spatial tokens of a feature map, then a
    linear map to the joint embedding width and per-pixel unit normalization.

    ``(K, C, H, W) -> (K, C_emb, H, W)``.
    """

    def __init__(self, in_channels: int, embed_dim: int, num_heads: int = 4,
                 ffn_dim=None, positional: bool = False, max_tokens: int = 4096):
        super().__init__()
        ffn_dim = ffn_dim or 2 * in_channels
        self.attn = nn.MultiheadAttention(in_channels, num_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(in_channels)
        self.ffn = nn.Sequential(nn.Linear(in_channels, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, in_channels))
        self.norm2 = nn.LayerNorm(in_channels)
        self.out = nn.Linear(in_channels, embed_dim)
        self.positional = positional
        if positional:
            self.pos = nn.Parameter(torch.zeros(1, max_tokens, in_channels))
            nn.init.normal_(self.pos, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        k, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        q = tokens + self.pos[:, : h * w] if self.positional else tokens
        t = self.norm1(tokens + self.attn(q, q, tokens, need_weights=False)[0])
        t = self.norm2(t + self.ffn(t))
        e = self.out(t)
        e = e / e.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return e.transpose(1, 2).reshape(k, -1, h, w)


def project_image_features(features: torch.Tensor, head: ProjectionHead) -> torch.Tensor:
    if features.dim() == 3:
        return head(features.unsqueeze(0))[0]
    return head(features)


class HeatmapHead(nn.Module):
    """Two 3x3 conv + ReLU layers, a 1x1 conv to ``out_channels``, logistic output."""

    def __init__(self, in_channels: int, out_channels: int, hidden: int = None):
        super().__init__()
        hidden = hidden or in_channels
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1), nn.ReLU(),
            nn.Conv2d(hidden, hidden, 3, padding=1), nn.ReLU(),
        )
        self.final = nn.Conv2d(hidden, out_channels, 1)
        nn.init.constant_(self.final.bias, -math.log((1 - FOCAL_PRIOR) / FOCAL_PRIOR))

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.final(self.body(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))


def heatmap_head(F_sc_i: torch.Tensor, head: HeatmapHead) -> torch.Tensor:
    if F_sc_i.dim() == 3:
        return head(F_sc_i.unsqueeze(0))[0]
    return head(F_sc_i)


def local_maxima(heat: torch.Tensor, threshold: float, max_count: int, kernel: int = 3):
    """Peaks of a ``(H, W)`` map: returns ``(K, 2)`` integer (x, y) and ``(K,)`` scores."""
    pooled = F.max_pool2d(heat[None, None], kernel, stride=1, padding=kernel // 2)[0, 0]
    keep = (heat == pooled) & (heat >= threshold)
    ys, xs = torch.nonzero(keep, as_tuple=True)
    scores = heat[ys, xs]
    order = torch.argsort(scores, descending=True, stable=True)[:max_count]
    return torch.stack([xs[order], ys[order]], dim=1), scores[order]
