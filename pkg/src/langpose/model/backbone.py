import torch
import torch.nn.functional as F
from torch import nn


def conv_block(in_ch, out_ch, stride=1):
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1), nn.ReLU(inplace=False))


class TwoBranchBackbone(nn.Module):
    """Small two-resolution backbone.

    A stem brings the input to stride 4; a second branch goes on to stride 8.
    The coarse branch is upsampled, concatenated with the fine one and mixed
    by a 1x1 convolution into ``out_channels`` maps at stride 4.

    Any module mapping ``(B, 3, H, W)`` to ``(B, out_channels, H/4, W/4)`` can
    stand in for this one.
    """

    stride = 4

    def __init__(self, channels=(16, 32), out_channels=32):
        super().__init__()
        c4, c8 = channels
        self.stem = nn.Sequential(conv_block(3, c4, 2), conv_block(c4, c4, 2), conv_block(c4, c4))
        self.down = nn.Sequential(conv_block(c4, c8, 2), conv_block(c8, c8))
        self.fuse = nn.Conv2d(c4 + c8, out_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x4 = self.stem(x)
        x8 = self.down(x4)
        up = F.interpolate(x8, size=x4.shape[-2:], mode="bilinear", align_corners=False)
        return self.fuse(torch.cat([x4, up], dim=1))


def extract_global_features(image: torch.Tensor, backbone: nn.Module) -> torch.Tensor:
    if image.dim() == 3:
        return backbone(image.unsqueeze(0))[0]
    return backbone(image)
