"""COCO keypoint JSON reading and writing."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from ..types import InstanceAnnotation, SceneSample, SkeletonSpec


class CocoFormatError(ValueError):
    pass


@dataclass
class Dataset:
    samples: List[SceneSample]
    skeleton: SkeletonSpec
    source: str = "synthetic"

    def __post_init__(self):
        if self.source not in ("synthetic", "coco_json"):
            raise ValueError(f"unknown dataset source {self.source!r}")
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")
        for s in self.samples:
            for inst in s.instances:
                if inst.num_joints != self.skeleton.m:
                    raise ValueError(
                        f"sample {s.sample_id!r} has a {inst.num_joints}-joint instance, skeleton has {self.skeleton.m}"
                    )

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def _require(record: dict, key: str, what: str):
    if key not in record:
        raise CocoFormatError(f"{what} is missing field {key!r}: {json.dumps(record)[:200]}")
    return record[key]


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def parse_coco_annotation(ann: dict, skeleton: SkeletonSpec) -> Optional[InstanceAnnotation]:
    """One COCO annotation record; ``None`` when it has no labeled keypoints."""
    what = f"annotation id={ann.get('id')!r}"
    kps = _require(ann, "keypoints", what)
    bbox = _require(ann, "bbox", what)
    if len(kps) != 3 * skeleton.m:
        raise CocoFormatError(f"{what} has {len(kps)} keypoint values, expected {3 * skeleton.m}")
    if len(bbox) != 4:
        raise CocoFormatError(f"{what} has a malformed bbox {bbox}")
    kp = np.asarray(kps, dtype=np.float64).reshape(-1, 3)
    num = ann.get("num_keypoints", int(np.count_nonzero(kp[:, 2] > 0)))
    if num == 0:
        return None
    vis = kp[:, 2] == 2
    x, y, w, h = (float(b) for b in bbox)
    if vis.any():
        center = tuple(kp[vis, :2].mean(axis=0))
    else:
        center = (x + w / 2, y + h / 2)
    try:
        return InstanceAnnotation(kp, (x, y, max(w, 1e-3), max(h, 1e-3)), center, ann.get("area"))
    except ValueError as e:
        raise CocoFormatError(f"{what}: {e}") from e


def load_coco_keypoints(annotation_path, image_root, skeleton: SkeletonSpec) -> Dataset:
    """One sample per image record; annotations with zero keypoints are dropped."""
    annotation_path = Path(annotation_path)
    try:
        with open(annotation_path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise CocoFormatError(f"{annotation_path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise CocoFormatError(f"{annotation_path}: top level must be an object")
    images = _require(data, "images", str(annotation_path))
    annotations = _require(data, "annotations", str(annotation_path))

    by_image = {}
    for ann in annotations:
        if ann.get("iscrowd", 0):
            continue
        image_id = _require(ann, "image_id", f"annotation id={ann.get('id')!r}")
        inst = parse_coco_annotation(ann, skeleton)
        if inst is not None:
            by_image.setdefault(image_id, []).append(inst)

    samples = []
    for rec in images:
        what = f"image id={rec.get('id')!r}"
        image_id = _require(rec, "id", what)
        fname = _require(rec, "file_name", what)
        image = _read_image(Path(image_root) / fname)
        crowd = rec.get("crowdIndex", rec.get("crowd_index"))
        sample_id = str(rec.get("sample_id", image_id))
        samples.append(SceneSample(image, by_image.get(image_id, []), sample_id=sample_id,
                                   crowd_index=None if crowd is None else float(crowd),
                                   meta={"file_name": fname}))
    return Dataset(samples, skeleton, source="coco_json")


def export_coco(dataset: Dataset, out_dir, annotation_name: str = "annotations.json") -> Path:
    """Write PNG images plus a COCO keypoint JSON that ``load_coco_keypoints`` reads back."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    ann_id = 1
    for image_id, s in enumerate(dataset.samples, start=1):
        fname = f"images/{image_id:06d}.png"
        arr = (np.clip(s.image, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
        Image.fromarray(arr).save(out_dir / fname)
        h, w = s.image_size
        rec = {"id": image_id, "file_name": fname, "height": h, "width": w, "sample_id": s.sample_id}
        if s.crowd_index is not None:
            rec["crowdIndex"] = s.crowd_index
        images.append(rec)
        for inst in s.instances:
            annotations.append({
                "id": ann_id,
                "image_id": image_id,
                "category_id": 1,
                "iscrowd": 0,
                "keypoints": inst.keypoints.reshape(-1).tolist(),
                "num_keypoints": inst.num_labeled,
                "bbox": list(inst.bbox),
                "area": inst.bbox_area,
            })
            ann_id += 1
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{
            "id": 1,
            "name": "person",
            "keypoints": list(dataset.skeleton.joint_names),
            "skeleton": [[a + 1, b + 1] for a, b in dataset.skeleton.edges],
        }],
    }
    path = out_dir / annotation_name
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path
