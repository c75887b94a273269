from .backbone import TwoBranchBackbone, extract_global_features
from .decoupling import (
    InstanceDecoupling,
    bilinear_sample,
    channel_recalibration,
    compute_instance_mask,
    sample_instance_features,
    spatial_recalibration,
)
from .heads import HeatmapHead, ProjectionHead, heatmap_head, local_maxima, project_image_features
from .network import LanguagePoseNet, ModelConfig
