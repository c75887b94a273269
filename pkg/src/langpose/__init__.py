"""Language-assisted multi-person pose estimation at desk scale."""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import Dataset, SyntheticSceneConfig, generate_synthetic_scene, load_coco_keypoints, make_synthetic_dataset
from .estimator import PoseEstimator
from .evaluation import EvalReport, PredictedPose, compute_ap_ar, compute_oks, decode_keypoints
from .losses import FocalParams, LossWeights
from .prompts import PromptTemplateConfig
from .types import COCO_SKELETON, CROWDPOSE_SKELETON, SYNTHETIC_SKELETON, InstanceAnnotation, SceneSample, SkeletonSpec

__version__ = "0.1.0"
