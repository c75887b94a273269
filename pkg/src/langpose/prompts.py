"""Instance attributes (location, pseudo-depth, occlusion) and prompt rendering."""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .types import InstanceAnnotation, SkeletonSpec

LOCATION_LABELS = (
    ("top left", "top center", "top right"),
    ("middle left", "center", "middle right"),
    ("bottom left", "bottom center", "bottom right"),
)
DEPTH_LABELS = ("far", "close", "giant")
OCCLUSION_LABELS = ("occluded", "fully visible")

DEFAULT_TEMPLATE = "A {occlusion} person at the {location} of the image, {depth} from the camera."
_PLACEHOLDERS = ("occlusion", "location", "depth")


@dataclass(frozen=True)
class PromptAttributes:
    location_label: str
    depth_label: str
    occlusion_label: str

    def __post_init__(self):
        if self.location_label not in {l for row in LOCATION_LABELS for l in row}:
            raise ValueError(f"unknown location label {self.location_label!r}")
        if self.depth_label not in DEPTH_LABELS:
            raise ValueError(f"unknown depth label {self.depth_label!r}")
        if self.occlusion_label not in OCCLUSION_LABELS:
            raise ValueError(f"unknown occlusion label {self.occlusion_label!r}")


@dataclass(frozen=True)
class PromptTemplateConfig:
    template: str = DEFAULT_TEMPLATE
    depth_thresholds: Tuple[float, float] = (0.3, 0.7)
    occlusion_visible_fraction: float = 0.7

    def __post_init__(self):
        fields = [f for _, f, _, _ in string.Formatter().parse(self.template) if f is not None]
        for name in _PLACEHOLDERS:
            if fields.count(name) != 1:
                raise ValueError(f"template must contain {{{name}}} exactly once: {self.template!r}")
        extra = set(fields) - set(_PLACEHOLDERS)
        if extra:
            raise ValueError(f"template has unknown placeholders {sorted(extra)}")
        t_far, t_giant = self.depth_thresholds
        if not (0 < t_far < t_giant < np.inf):
            raise ValueError(f"depth thresholds must satisfy 0 < far < giant, got {self.depth_thresholds}")
        if not (0 < self.occlusion_visible_fraction <= 1):
            raise ValueError("occlusion_visible_fraction must lie in (0, 1]")
        object.__setattr__(self, "depth_thresholds", (float(t_far), float(t_giant)))


def _grid_index(v: float, extent: float) -> int:
    v = min(max(v, 0.0), extent)
    # boundary points belong to the higher-index cell
    if v >= 2 * extent / 3:
        return 2
    if v >= extent / 3:
        return 1
    return 0


def compute_location_label(center: Sequence[float], image_size: Sequence[int]) -> str:
    x, y = center
    h, w = image_size
    return LOCATION_LABELS[_grid_index(y, h)][_grid_index(x, w)]


def compute_depth_label(bbox, image_size, thresholds=(0.3, 0.7)) -> str:
    _, _, w, h = bbox
    img_h, img_w = image_size
    r = max(w / img_w, h / img_h)
    t_far, t_giant = thresholds
    if r < t_far:
        return "far"
    if r < t_giant:
        return "close"
    return "giant"


def compute_occlusion_label(keypoints, visible_fraction_threshold: float = 0.7) -> str:
    v = np.asarray(keypoints)[:, 2]
    labeled = np.count_nonzero(v > 0)
    if labeled == 0:
        return "occluded"
    visible = np.count_nonzero(v == 2)
    return "occluded" if visible / labeled < visible_fraction_threshold else "fully visible"


def instance_attributes(
    instance: InstanceAnnotation, image_size, config: PromptTemplateConfig = PromptTemplateConfig()
) -> PromptAttributes:
    x, y, w, h = instance.bbox
    # location uses the bbox center
    return PromptAttributes(
        location_label=compute_location_label((x + w / 2, y + h / 2), image_size),
        depth_label=compute_depth_label(instance.bbox, image_size, config.depth_thresholds),
        occlusion_label=compute_occlusion_label(instance.keypoints, config.occlusion_visible_fraction),
    )


def render_instance_prompt(attrs: PromptAttributes, template: PromptTemplateConfig = PromptTemplateConfig()) -> str:
    return template.template.format(
        occlusion=attrs.occlusion_label, location=attrs.location_label, depth=attrs.depth_label
    )


def instance_prompts(instances, image_size, config: PromptTemplateConfig = PromptTemplateConfig()) -> List[str]:
    return [render_instance_prompt(instance_attributes(inst, image_size, config), config) for inst in instances]


def all_instance_prompts(config: PromptTemplateConfig = PromptTemplateConfig()) -> List[str]:
    """Every prompt the template can produce (9 locations x 3 depths x 2 occlusion states)."""
    out = []
    for row in LOCATION_LABELS:
        for loc in row:
            for depth in DEPTH_LABELS:
                for occ in OCCLUSION_LABELS:
                    out.append(render_instance_prompt(PromptAttributes(loc, depth, occ), config))
    return out


def joint_prompt_vocabulary(skeleton: SkeletonSpec) -> List[str]:
    return list(skeleton.joint_names)
