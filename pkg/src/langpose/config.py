"""Run configuration: a YAML document whose sections mirror the estimator's parameters.

Unknown keys anywhere in the document are an error.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import yaml

from .data import Dataset, SyntheticSceneConfig, load_coco_keypoints, make_synthetic_dataset
from .prompts import DEFAULT_TEMPLATE, PromptTemplateConfig
from .types import COCO_SKELETON, CROWDPOSE_SKELETON, SYNTHETIC_SKELETON, SkeletonSpec

SKELETONS = {"coco": COCO_SKELETON, "crowdpose": CROWDPOSE_SKELETON, "synthetic": SYNTHETIC_SKELETON}


class ConfigError(ValueError):
    pass


def skeleton_by_name(name: str) -> SkeletonSpec:
    try:
        return SKELETONS[name]
    except KeyError:
        raise ConfigError(f"unknown skeleton {name!r}; choose from {sorted(SKELETONS)}") from None


@dataclass
class ModelSection:
    backbone_channels: List[int] = field(default_factory=lambda: [16, 32])
    feature_dim: int = 32
    fused_dim: int = 32
    embed_dim: int = 64
    heatmap_stride: int = 4
    attention_heads: int = 4
    mask_mode: str = "cosine"
    channel_gate: bool = True
    image_embedding_source: str = "global"
    instance_reduction: str = "conv"
    decoder_cross_attention: bool = True


@dataclass
class LossWeightsSection:
    contrastive: float = 1.0
    heatmap: float = 1.0
    instance_prompt: float = 1.0
    keypoint_prompt: float = 1.0
    pixel_prompt: float = 1.0


@dataclass
class LossSection:
    weights: LossWeightsSection = field(default_factory=LossWeightsSection)
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    tau: float = 0.5
    tau_k: float = 0.07
    literal_norms: bool = False


@dataclass
class PromptSection:
    template: str = DEFAULT_TEMPLATE
    depth_thresholds: List[float] = field(default_factory=lambda: [0.3, 0.7])
    occlusion_visible_fraction: float = 0.7


@dataclass
class SyntheticSection:
    num_samples: int = 8
    num_instances_range: List[int] = field(default_factory=lambda: [2, 3])
    overlap_probability: float = 0.5
    occlusion_fraction_range: List[float] = field(default_factory=lambda: [0.05, 0.6])
    image_size: List[int] = field(default_factory=lambda: [64, 64])
    figure_height_range: List[float] = field(default_factory=lambda: [0.55, 0.8])
    min_center_distance: float = 10.0


@dataclass
class CocoSection:
    annotations: Optional[str] = None
    images: Optional[str] = None


@dataclass
class AugmentSection:
    enabled: bool = False
    rotation_max: float = 30.0
    scale_range: List[float] = field(default_factory=lambda: [0.75, 1.5])
    translate_max: float = 0.1
    input_size: List[int] = field(default_factory=lambda: [512, 512])


@dataclass
class DataSection:
    source: str = "synthetic"
    skeleton: str = "synthetic"
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    coco: CocoSection = field(default_factory=CocoSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    heatmap_sigma: float = 2.0
    center_sigma: float = 1.0
    test_short_side: Optional[int] = None


@dataclass
class OptimizerSection:
    learning_rate: float = 1e-3
    steps: int = 1000
    batch_size: int = 8
    lr_decay_steps: Optional[int] = None
    lr_decay_gamma: float = 0.1


@dataclass
class TextEncoderSection:
    kind: str = "stub"
    seed: int = 0
    weights_path: Optional[str] = None


@dataclass
class InferenceSection:
    center_threshold: float = 0.1
    max_instances: int = 20


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    losses: LossSection = field(default_factory=LossSection)
    prompts: PromptSection = field(default_factory=PromptSection)
    data: DataSection = field(default_factory=DataSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    text_encoder: TextEncoderSection = field(default_factory=TextEncoderSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if not self.optimizer.learning_rate > 0:
            raise ConfigError("optimizer.learning_rate must be positive")
        if self.optimizer.steps < 1:
            raise ConfigError("optimizer.steps must be >= 1")
        if self.optimizer.batch_size < 1:
            raise ConfigError("optimizer.batch_size must be >= 1")
        if self.data.source not in ("synthetic", "coco"):
            raise ConfigError(f"data.source must be 'synthetic' or 'coco', got {self.data.source!r}")
        skeleton_by_name(self.data.skeleton)
        if self.data.source == "coco" and check_paths:
            for key in ("annotations", "images"):
                p = getattr(self.data.coco, key)
                if not p or not Path(p).exists():
                    raise ConfigError(f"data.coco.{key} path {p!r} does not exist")
        if self.text_encoder.kind == "pretrained" and check_paths:
            p = self.text_encoder.weights_path
            if not p or not Path(p).exists():
                raise ConfigError(f"text_encoder.weights_path {p!r} does not exist")
        try:
            self.prompt_config()
            self.synthetic_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    # -- builders --------------------------------------------------------------

    def skeleton(self) -> SkeletonSpec:
        return skeleton_by_name(self.data.skeleton)

    def prompt_config(self) -> PromptTemplateConfig:
        p = self.prompts
        return PromptTemplateConfig(p.template, tuple(p.depth_thresholds), p.occlusion_visible_fraction)

    def synthetic_config(self, seed: Optional[int] = None) -> SyntheticSceneConfig:
        s = self.data.synthetic
        return SyntheticSceneConfig(
            num_instances_range=tuple(s.num_instances_range),
            overlap_probability=s.overlap_probability,
            occlusion_fraction_range=tuple(s.occlusion_fraction_range),
            image_size=tuple(s.image_size),
            skeleton=self.skeleton(),
            seed=self.seed if seed is None else seed,
            figure_height_range=tuple(s.figure_height_range),
            min_center_distance=s.min_center_distance,
        )

    def build_dataset(self) -> Dataset:
        if self.data.source == "synthetic":
            return make_synthetic_dataset(self.synthetic_config(), self.data.synthetic.num_samples)
        return load_coco_keypoints(self.data.coco.annotations, self.data.coco.images, self.skeleton())

    def estimator_params(self) -> dict:
        m, l, a = self.model, self.losses, self.data.augment
        w = l.weights
        return dict(
            skeleton=self.skeleton(),
            backbone_channels=tuple(m.backbone_channels), feature_dim=m.feature_dim, fused_dim=m.fused_dim,
            embed_dim=m.embed_dim, attention_heads=m.attention_heads, mask_mode=m.mask_mode,
            channel_gate=m.channel_gate, image_embedding_source=m.image_embedding_source,
            instance_reduction=m.instance_reduction, decoder_cross_attention=m.decoder_cross_attention,
            loss_weights=(w.contrastive, w.heatmap, w.instance_prompt, w.keypoint_prompt, w.pixel_prompt),
            tau=l.tau, tau_k=l.tau_k, focal_alpha=l.focal_alpha, focal_beta=l.focal_beta,
            literal_norms=l.literal_norms, sigma=self.data.heatmap_sigma,
            center_sigma=self.data.center_sigma, stride=m.heatmap_stride,
            prompt_config=self.prompt_config(), text_encoder=self.text_encoder.kind,
            text_encoder_path=self.text_encoder.weights_path, text_encoder_seed=self.text_encoder.seed,
            learning_rate=self.optimizer.learning_rate, steps=self.optimizer.steps,
            batch_size=self.optimizer.batch_size, lr_decay_steps=self.optimizer.lr_decay_steps,
            lr_decay_gamma=self.optimizer.lr_decay_gamma, augment=a.enabled, rotation_max=a.rotation_max,
            scale_range=tuple(a.scale_range), translate_max=a.translate_max, input_size=tuple(a.input_size),
            test_short_side=self.data.test_short_side, center_threshold=self.inference.center_threshold,
            max_instances=self.inference.max_instances, seed=self.seed,
        )

    def to_estimator(self, **overrides):
        from .estimator import PoseEstimator

        params = self.estimator_params()
        params.update(overrides)
        return PoseEstimator(**params)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _from_dict(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(repr(path + '.' + k if path else k) for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _from_dict(type(default), value, sub)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data, "")


def load_config(path, check_paths: bool = True) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data).validate(check_paths)


def dump_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
