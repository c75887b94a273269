"""Small tensor helpers shared by the model and the losses."""
import warnings

import torch
import torch.nn.functional as F


class CenterClampWarning(UserWarning):
    pass


def sample_points(feature_maps: torch.Tensor, points: torch.Tensor, warn: bool = True) -> torch.Tensor:
    """Bilinear samples of ``(K, C, H, W)`` maps at ``(K, P, 2)`` pixel coordinates -> ``(K, P, C)``.

    Integer coordinates hit grid points exactly. Points outside the map are
    clamped to the border.
    """
    k, c, h, w = feature_maps.shape
    p = points.shape[1]
    if k == 0 or p == 0:
        return feature_maps.new_zeros((k, p, c))
    x, y = points[..., 0], points[..., 1]
    if warn and bool(((x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)).any()):
        warnings.warn("sample location outside feature map, clamped to border", CenterClampWarning)
    gx = 2 * x / max(w - 1, 1) - 1
    gy = 2 * y / max(h - 1, 1) - 1
    grid = torch.stack([gx, gy], dim=-1).unsqueeze(1)
    out = F.grid_sample(feature_maps, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return out[:, :, 0, :].transpose(1, 2)


def bilinear_sample(feature_maps: torch.Tensor, points: torch.Tensor, warn: bool = True) -> torch.Tensor:
    """One point per map: ``(K, C, H, W)`` at ``(K, 2)`` -> ``(K, C)``."""
    return sample_points(feature_maps, points.unsqueeze(1), warn)[:, 0]
