"""scikit-learn style front end: ``PoseEstimator().fit(dataset).predict(samples)``."""
from __future__ import annotations

import json
import logging
from typing import List, Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data.augment import augment as augment_sample
from .data.augment import resize_for_inference
from .data.coco import Dataset
from .evaluation import EvalReport, PredictedPose, compute_ap_ar
from .losses import FocalParams, LossWeights
from .model import LanguagePoseNet, ModelConfig
from .prompts import PromptTemplateConfig, joint_prompt_vocabulary
from .text import TextEncoderHandle, build_text_encoder, encoder_fingerprint
from .training import TextCache, TrainSettings, collate, infer_sample, loss_records, run_training, sample_targets
from .types import SceneSample, SkeletonSpec

logger = logging.getLogger(__name__)


def check_samples(X, skeleton: Optional[SkeletonSpec] = None):
    """Normalize ``X`` to ``(list of SceneSample, skeleton)`` and validate it."""
    if isinstance(X, Dataset):
        samples, skel = list(X.samples), X.skeleton
        if skeleton is not None and skeleton.joint_names != skel.joint_names:
            raise ValueError("dataset skeleton does not match the estimator's skeleton")
    elif isinstance(X, SceneSample):
        samples, skel = [X], skeleton
    else:
        samples, skel = list(X), skeleton
    if not samples:
        raise ValueError("no samples given")
    for s in samples:
        if not isinstance(s, SceneSample):
            raise TypeError(f"expected SceneSample, got {type(s).__name__}")
        img = s.image
        if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
            raise ValueError(f"sample {s.sample_id!r}: image values must be finite and in [0, 1]")
        if skel is not None:
            for inst in s.instances:
                if inst.num_joints != skel.m:
                    raise ValueError(
                        f"sample {s.sample_id!r}: {inst.num_joints}-joint instance, skeleton has {skel.m}"
                    )
    return samples, skel


class PoseEstimator(BaseEstimator):
    """Multi-person pose estimator trained with text-image alignment objectives.

    The image pathway (backbone, instance decoupling, heatmap heads) is trained
    jointly with three alignment objectives against a frozen text encoder: an
    instance prompt built from location/depth/occlusion attributes, and joint
    names matched at keypoint and pixel level. Any of the five loss terms can be
    switched off through ``loss_weights``.

    Parameters mirror the run-config sections; see ``langpose.config``.
    """

    def __init__(self, skeleton=None, backbone_channels=(16, 32), feature_dim=32, fused_dim=32,
                 embed_dim=64, attention_heads=4, mask_mode="cosine", channel_gate=True,
                 image_embedding_source="global", instance_reduction="conv", decoder_cross_attention=True,
                 loss_weights=(1.0, 1.0, 1.0, 1.0, 1.0), tau=0.5, tau_k=0.07, focal_alpha=2.0,
                 focal_beta=4.0, literal_norms=False, sigma=2.0, center_sigma=1.0, stride=4, prompt_config=None,
                 text_encoder="stub", text_encoder_path=None, text_encoder_seed=0,
                 learning_rate=1e-3, steps=1000, batch_size=8, lr_decay_steps=None, lr_decay_gamma=0.1,
                 augment=False, rotation_max=30.0, scale_range=(0.75, 1.5), translate_max=0.1,
                 input_size=(512, 512), test_short_side=None, center_threshold=0.1, max_instances=20,
                 seed=0, log_path=None):
        self.skeleton = skeleton
        self.backbone_channels = backbone_channels
        self.feature_dim = feature_dim
        self.fused_dim = fused_dim
        self.embed_dim = embed_dim
        self.attention_heads = attention_heads
        self.mask_mode = mask_mode
        self.channel_gate = channel_gate
        self.image_embedding_source = image_embedding_source
        self.instance_reduction = instance_reduction
        self.decoder_cross_attention = decoder_cross_attention
        self.loss_weights = loss_weights
        self.tau = tau
        self.tau_k = tau_k
        self.focal_alpha = focal_alpha
        self.focal_beta = focal_beta
        self.literal_norms = literal_norms
        self.sigma = sigma
        self.center_sigma = center_sigma
        self.stride = stride
        self.prompt_config = prompt_config
        self.text_encoder = text_encoder
        self.text_encoder_path = text_encoder_path
        self.text_encoder_seed = text_encoder_seed
        self.learning_rate = learning_rate
        self.steps = steps
        self.batch_size = batch_size
        self.lr_decay_steps = lr_decay_steps
        self.lr_decay_gamma = lr_decay_gamma
        self.augment = augment
        self.rotation_max = rotation_max
        self.scale_range = scale_range
        self.translate_max = translate_max
        self.input_size = input_size
        self.test_short_side = test_short_side
        self.center_threshold = center_threshold
        self.max_instances = max_instances
        self.seed = seed
        self.log_path = log_path

    # -- construction helpers ------------------------------------------------

    def _model_config(self, skeleton: SkeletonSpec) -> ModelConfig:
        return ModelConfig(
            backbone_channels=tuple(self.backbone_channels), feature_dim=self.feature_dim,
            fused_dim=self.fused_dim, embed_dim=self.embed_dim, heatmap_stride=self.stride,
            num_joints=skeleton.m, attention_heads=self.attention_heads, mask_mode=self.mask_mode,
            channel_gate=self.channel_gate, image_embedding_source=self.image_embedding_source,
            instance_reduction=self.instance_reduction, decoder_cross_attention=self.decoder_cross_attention,
        )

    def _text_handle(self) -> TextEncoderHandle:
        return TextEncoderHandle(self.text_encoder, self.embed_dim, self.text_encoder_seed, self.text_encoder_path)

    def _prompt_config(self) -> PromptTemplateConfig:
        return self.prompt_config if self.prompt_config is not None else PromptTemplateConfig()

    def _train_settings(self) -> TrainSettings:
        return TrainSettings(
            steps=self.steps, batch_size=self.batch_size, learning_rate=self.learning_rate,
            lr_decay_steps=self.lr_decay_steps, lr_decay_gamma=self.lr_decay_gamma,
            weights=LossWeights.from_sequence(self.loss_weights),
            focal=FocalParams(self.focal_alpha, self.focal_beta), tau=self.tau, tau_k=self.tau_k,
            literal_norms=self.literal_norms, sigma=self.sigma, seed=self.seed,
        )

    def _validate_params(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.tau > 0 or not self.tau_k > 0:
            raise ValueError("temperatures must be positive")
        if not self.sigma > 0 or not self.center_sigma > 0:
            raise ValueError("heatmap sigmas must be positive")

    def _build(self, skeleton: SkeletonSpec):
        torch.manual_seed(self.seed)
        self.skeleton_ = skeleton
        self.model_ = LanguagePoseNet(self._model_config(skeleton))
        self.text_encoder_ = build_text_encoder(self._text_handle())
        self.text_cache_ = TextCache(self.text_encoder_)
        self.joint_text_ = self.text_cache_(joint_prompt_vocabulary(skeleton), torch.float64)

    # -- public API ----------------------------------------------------------

    def fit(self, X, y=None):
        """Train on a :class:`Dataset` or a list of :class:`SceneSample`."""
        self._validate_params()
        samples, skeleton = check_samples(X, self.skeleton)
        if skeleton is None:
            raise ValueError("pass a Dataset or set the skeleton parameter")
        self._build(skeleton)
        settings = self._train_settings()
        prompt_cfg = self._prompt_config()
        aug_rng = np.random.default_rng([self.seed, 1])
        cached = {}

        def targets_for(i):
            if self.augment:
                s = augment_sample(samples[i], self.rotation_max, self.scale_range, self.translate_max,
                                   aug_rng, tuple(self.input_size))
                return sample_targets(s, skeleton, self.stride, self.sigma, prompt_cfg, self.center_sigma)
            if i not in cached:
                cached[i] = sample_targets(samples[i], skeleton, self.stride, self.sigma, prompt_cfg,
                                           self.center_sigma)
            return cached[i]

        def batch_fn(idx):
            return collate([targets_for(int(i)) for i in idx], self.text_cache_, self.joint_text_)

        # fail on shape problems before step 0
        if self.augment:
            if any(int(s) % self.stride for s in self.input_size):
                raise ValueError(f"input_size {tuple(self.input_size)} is not divisible by stride {self.stride}")
        else:
            for i in range(len(samples)):
                targets_for(i)
        log_fh = open(self.log_path, "w") if self.log_path else None

        def log_fn(record):
            if log_fh is not None:
                for line in loss_records(record):
                    log_fh.write(json.dumps(line) + "\n")
            logger.debug("step %(step)d total %(total).5f", record)

        try:
            history, best_state, best_loss = run_training(self.model_, batch_fn, len(samples), settings, log_fn)
        finally:
            if log_fh is not None:
                log_fh.close()
        self.history_ = history
        self.best_state_ = best_state
        self.best_loss_ = best_loss
        self.n_steps_ = len(history)
        return self

    def _check_fitted(self):
        check_is_fitted(self, "model_")

    def predict(self, X) -> List[List[PredictedPose]]:
        """Per-sample lists of poses in original image coordinates."""
        self._check_fitted()
        samples, _ = check_samples(X, self.skeleton_)
        out = []
        for s in samples:
            resized, scale = resize_for_inference(s, self.test_short_side, self.stride)
            poses, _ = infer_sample(self.model_, resized.image, center_threshold=self.center_threshold,
                                    max_instances=self.max_instances, scale=scale)
            out.append(poses)
        return out

    def predict_with_maps(self, sample: SceneSample):
        self._check_fitted()
        resized, scale = resize_for_inference(sample, self.test_short_side, self.stride)
        return infer_sample(self.model_, resized.image, center_threshold=self.center_threshold,
                            max_instances=self.max_instances, scale=scale)

    def evaluate(self, X) -> EvalReport:
        self._check_fitted()
        samples, skel = check_samples(X, self.skeleton_)
        preds = self.predict(samples)
        crowd = [s.crowd_index for s in samples]
        return compute_ap_ar(preds, samples, skel.oks_sigmas,
                             crowd_indices=crowd if all(c is not None for c in crowd) else None)

    def score(self, X, y=None) -> float:
        """OKS AP averaged over thresholds 0.50:0.95."""
        return self.evaluate(X).AP

    def text_encoder_fingerprint(self) -> str:
        self._check_fitted()
        from .prompts import all_instance_prompts

        probes = all_instance_prompts(self._prompt_config()) + joint_prompt_vocabulary(self.skeleton_)
        return encoder_fingerprint(self.text_encoder_, probes)
