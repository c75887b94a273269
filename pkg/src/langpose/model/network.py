"""Full image pathway: backbone, instance decoupling, projection heads, heatmap heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import torch
from torch import nn

from ..losses import instance_similarity_map, keypoint_similarity, pixel_similarity
from ..text import TextDecoderLayer
from .backbone import TwoBranchBackbone
from ..ops import sample_points
from .decoupling import InstanceDecoupling
from .heads import HeatmapHead, ProjectionHead


@dataclass
class ModelConfig:
    backbone_channels: Tuple[int, int] = (16, 32)
    feature_dim: int = 32
    fused_dim: int = 32
    embed_dim: int = 64
    heatmap_stride: int = 4
    num_joints: int = 17
    attention_heads: int = 4
    mask_mode: str = "cosine"
    channel_gate: bool = True
    image_embedding_source: str = "global"
    instance_reduction: str = "conv"
    decoder_cross_attention: bool = True
    positional_encoding: bool = False

    def __post_init__(self):
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        for name in ("feature_dim", "fused_dim", "embed_dim", "heatmap_stride", "num_joints", "attention_heads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if len(self.backbone_channels) != 2 or min(self.backbone_channels) <= 0:
            raise ValueError("backbone_channels must be two positive integers")
        if self.heatmap_stride != TwoBranchBackbone.stride:
            raise ValueError(f"the built-in backbone has stride {TwoBranchBackbone.stride}")
        for name in ("feature_dim", "fused_dim", "embed_dim"):
            if getattr(self, name) % self.attention_heads:
                raise ValueError(f"{name} must be divisible by attention_heads")
        if self.image_embedding_source not in ("global", "instance"):
            raise ValueError("image_embedding_source must be 'global' or 'instance'")
        if self.instance_reduction not in ("conv", "mean"):
            raise ValueError("instance_reduction must be 'conv' or 'mean'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d


class LanguagePoseNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.backbone = TwoBranchBackbone(c.backbone_channels, c.feature_dim)
        self.decoupling = InstanceDecoupling(c.feature_dim, c.fused_dim, c.mask_mode, c.channel_gate)
        self.heatmap_head = HeatmapHead(c.fused_dim, c.num_joints)
        self.center_head = HeatmapHead(c.feature_dim, 1)
        self.image_projection = ProjectionHead(c.feature_dim, c.embed_dim, c.attention_heads,
                                               positional=c.positional_encoding)
        self.instance_projection = ProjectionHead(c.fused_dim, c.embed_dim, c.attention_heads,
                                                  positional=c.positional_encoding)
        self.text_decoder = TextDecoderLayer(c.embed_dim, c.attention_heads,
                                             cross_attention=c.decoder_cross_attention)
        if c.instance_reduction == "conv":
            self.instance_reduce = nn.Conv2d(c.fused_dim, 1, 1)

    @property
    def stride(self) -> int:
        return self.config.heatmap_stride

    def reduce_instance_features(self, F_sc: torch.Tensor) -> torch.Tensor:
        if self.config.instance_reduction == "conv":
            return self.instance_reduce(F_sc)[:, 0]
        return F_sc.mean(1)

    def decouple(self, F_map, centers, image_index):
        out = self.decoupling(F_map, centers, image_index)
        out["F"] = F_map
        out["heatmaps"] = self.heatmap_head(out["F_sc"])
        return out

    def forward(self, images, centers, image_index, instance_text, joint_text, joints, joint_valid):
        """Training forward pass.

        images (B, 3, H, W); centers (N, 2) and joints (N, m, 2) in heatmap
        coordinates; image_index (N,); instance_text (N, C_emb) frozen prompt
        embeddings; joint_text (m, C_emb); joint_valid (N, m) bool.
        """
        F_map = self.backbone(images)
        out = self.decouple(F_map, centers, image_index)
        out["center_heatmap"] = self.center_head(F_map)[:, 0]
        F_img = self.image_projection(F_map)
        out["F_img"] = F_img

        J_ins = instance_text.new_zeros(instance_text.shape)
        for b in range(images.shape[0]):
            sel = torch.nonzero(image_index == b, as_tuple=True)[0]
            if sel.numel() == 0:
                continue
            ctx = F_img[b].flatten(1).T if self.config.decoder_cross_attention else None
            J_ins = J_ins.index_copy(0, sel, self.text_decoder(instance_text[sel], ctx))
        out["J_ins"] = J_ins

        if self.config.image_embedding_source == "global":
            img_per_inst = F_img[image_index]
        else:
            img_per_inst = self.image_projection(out["F_s"])
        out["S_ins"] = instance_similarity_map(img_per_inst, J_ins)
        out["F_sc_reduced"] = self.reduce_instance_features(out["F_sc"])

        F_ins = self.instance_projection(out["F_sc"])
        out["F_ins"] = F_ins
        flat = sample_points(F_ins, joints, warn=False)
        F_kp = flat / flat.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        F_kp = F_kp * joint_valid.unsqueeze(-1).to(F_kp.dtype)
        out["F_keypoint"] = F_kp
        out["S_keypoint"] = keypoint_similarity(F_kp, joint_text)
        out["S_pixel"] = pixel_similarity(F_ins, joint_text)
        return out
