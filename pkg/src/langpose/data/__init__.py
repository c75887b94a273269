from .augment import augment, augmentation_matrix, apply_affine, resize_for_inference, warp_sample
from .coco import CocoFormatError, Dataset, export_coco, load_coco_keypoints
from .synthetic import PlacementError, SyntheticSceneConfig, generate_synthetic_scene


def make_synthetic_dataset(config: SyntheticSceneConfig, count: int) -> Dataset:
    samples = [generate_synthetic_scene(config, i) for i in range(count)]
    return Dataset(samples, config.skeleton, source="synthetic")
