"""Keypoint decoding and OKS-based average precision / recall."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .types import InstanceAnnotation

logger = logging.getLogger(__name__)

OKS_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {"all": (0.0, np.inf), "M": (32.0 ** 2, 96.0 ** 2), "L": (96.0 ** 2, np.inf)}
CROWD_RANGES = {"E": (0.0, 0.1), "M": (0.1, 0.8), "H": (0.8, np.inf)}
MAX_DETECTIONS = 20


@dataclass
class PredictedPose:
    keypoints: np.ndarray  # (m, 3): x, y, score in image pixels
    instance_score: float

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.instance_score = float(self.instance_score)

    def to_dict(self) -> dict:
        return {"keypoints": self.keypoints.reshape(-1).tolist(), "score": self.instance_score}

    @classmethod
    def from_dict(cls, d: dict) -> "PredictedPose":
        return cls(np.asarray(d["keypoints"], dtype=np.float64).reshape(-1, 3), d["score"])


@dataclass
class EvalReport:
    AP: float
    AP50: float
    AP75: float
    AP_M: float
    AP_L: float
    AR: float
    AR_M: float
    AR_L: float
    crowd: Dict[str, float] = field(default_factory=dict)
    thresholds: List[float] = field(default_factory=list)
    precision: List[List[float]] = field(default_factory=list)  # per threshold, over RECALL_POINTS
    recall: List[float] = field(default_factory=list)  # per threshold

    SUMMARY_KEYS = ("AP", "AP50", "AP75", "AP_M", "AP_L", "AR", "AR_M", "AR_L")

    def summary(self) -> Dict[str, float]:
        out = {k: getattr(self, k) for k in self.SUMMARY_KEYS}
        out.update({f"AP_{k}": v for k, v in self.crowd.items()})
        return out

    def to_text(self) -> str:
        return "\n".join(f"{k}={v:.6f}" for k, v in self.summary().items()) + "\n"

    def to_json(self) -> str:
        d = self.summary()
        d["curves"] = {"thresholds": self.thresholds, "precision": self.precision, "recall": self.recall}
        return json.dumps(d, indent=2)


def decode_keypoints(p: np.ndarray, stride: int, offset=(0.0, 0.0), scale: float = 1.0) -> PredictedPose:
    """Argmax per joint with a quarter-pixel shift toward the larger neighbour.

    Heatmap coordinates map to image coordinates as ``(k + 0.5) * stride``;
    ``scale`` and ``offset`` then undo any test-time resize.
    """
    p = np.asarray(p, dtype=np.float64)
    m, h, w = p.shape
    kps = np.zeros((m, 3))
    for j in range(m):
        flat = int(np.argmax(p[j]))
        y, x = divmod(flat, w)
        fx, fy = float(x), float(y)
        if 0 < x < w - 1:
            fx += 0.25 * np.sign(p[j, y, x + 1] - p[j, y, x - 1])
        if 0 < y < h - 1:
            fy += 0.25 * np.sign(p[j, y + 1, x] - p[j, y - 1, x])
        kps[j] = ((fx + 0.5) * stride * scale + offset[0], (fy + 0.5) * stride * scale + offset[1], p[j, y, x])
    return PredictedPose(kps, float(kps[:, 2].mean()))


def compute_oks(pred: PredictedPose, gt: InstanceAnnotation, sigmas: Sequence[float], area: float) -> Optional[float]:
    """Object keypoint similarity; ``None`` when the ground truth has no labeled joints."""
    if not area > 0:
        raise ValueError("area must be positive")
    vis = gt.keypoints[:, 2] > 0
    if not vis.any():
        return None
    k = 2.0 * np.asarray(sigmas, dtype=np.float64)
    d2 = np.sum((pred.keypoints[:, :2] - gt.keypoints[:, :2]) ** 2, axis=1)
    e = np.exp(-d2 / (2.0 * area * k ** 2))
    return float(e[vis].mean())


def _pred_area(pred: PredictedPose) -> float:
    xy = pred.keypoints[:, :2]
    span = xy.max(0) - xy.min(0)
    return float(span[0] * span[1])


def oks_matrix(preds, gts, sigmas) -> np.ndarray:
    """(P, G) OKS values; NaN where the ground truth has no labeled joints."""
    out = np.full((len(preds), len(gts)), np.nan)
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = compute_oks(p, g, sigmas, g.bbox_area)
            if v is not None:
                out[i, j] = v
    return out


def match_image(scores, oks, threshold, gt_ignore, pred_ignore_if_unmatched):
    """Greedy score-ordered matching for one image and one OKS threshold.

    Each prediction (descending score) takes the still-free ground truth with
    the highest OKS >= threshold, preferring non-ignored ground truths. Returns
    per-prediction status arrays ``(tp, ignored)`` in the sorted order, the
    sort order itself, and the count of non-ignored ground truths.
    """
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
    n_gt = oks.shape[1]
    # non-ignored ground truths first, as COCO does
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    ignored = np.zeros(len(order), dtype=bool)
    for rank, i in enumerate(order):
        best, best_j = threshold, -1
        for j in gt_order:
            if taken[j] or np.isnan(oks[i, j]):
                continue
            if best_j > -1 and not gt_ignore[best_j] and gt_ignore[j]:
                break
            if oks[i, j] < best:
                continue
            best, best_j = oks[i, j], j
        if best_j == -1:
            ignored[rank] = pred_ignore_if_unmatched[i]
            continue
        taken[best_j] = True
        if gt_ignore[best_j]:
            ignored[rank] = True
        else:
            tp[rank] = True
    return tp, ignored, order, int(np.count_nonzero(~np.asarray(gt_ignore, dtype=bool)))


def interpolated_precision(tp_sorted: np.ndarray, n_gt: int):
    """101-point interpolated precision curve and final recall for a ranked list."""
    if n_gt == 0:
        return np.zeros(len(RECALL_POINTS)), 0.0
    tps = np.cumsum(tp_sorted)
    fps = np.cumsum(~tp_sorted)
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, np.spacing(1))
    # monotone envelope from the right
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    curve = np.array([precision[i] if i < len(precision) else 0.0 for i in idx])
    return curve, float(recall[-1]) if len(recall) else 0.0


def _evaluate_range(predictions, ground_truth, sigmas, thresholds, area_range, images=None):
    lo, hi = area_range
    per_image = []
    for k, (preds, gts) in enumerate(zip(predictions, ground_truth)):
        if images is not None and k not in images:
            continue
        preds = sorted(preds, key=lambda p: -p.instance_score)[:MAX_DETECTIONS]
        gts = [g for g in gts if g.num_labeled > 0]
        oks = oks_matrix(preds, gts, sigmas)
        gt_ignore = np.array([not (lo <= g.bbox_area < hi) for g in gts], dtype=bool)
        pred_ignore = np.array([not (lo <= _pred_area(p) < hi) for p in preds], dtype=bool)
        per_image.append(([p.instance_score for p in preds], oks, gt_ignore, pred_ignore))

    curves, recalls = [], []
    for t in thresholds:
        scores, tps, n_gt = [], [], 0
        for s, oks, gt_ignore, pred_ignore in per_image:
            tp, ignored, order, n = match_image(s, oks, t, gt_ignore, pred_ignore)
            n_gt += n
            keep = ~ignored
            scores.extend(np.asarray(s)[order][keep])
            tps.extend(tp[keep])
        rank = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
        curve, rec = interpolated_precision(np.asarray(tps, dtype=bool)[rank], n_gt)
        curves.append(curve)
        recalls.append(rec)
    return np.array(curves), np.array(recalls)


def compute_ap_ar(predictions: Sequence[Sequence[PredictedPose]], ground_truth, sigmas,
                  thresholds: Sequence[float] = OKS_THRESHOLDS, crowd_indices=None) -> EvalReport:
    """COCO-style AP/AR over OKS thresholds.

    ``predictions[k]`` and ``ground_truth[k]`` are the poses of image ``k``
    (``ground_truth`` may also be a :class:`Dataset` or list of samples).
    """
    gts = _ground_truth_lists(ground_truth)
    if crowd_indices is None and hasattr(ground_truth, "samples"):
        crowd_indices = [s.crowd_index for s in ground_truth.samples]
    if len(predictions) != len(gts):
        raise ValueError(f"{len(predictions)} prediction lists for {len(gts)} images")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if sum(len(p) for p in predictions) == 0:
        logger.warning("no predictions to evaluate; AP is 0")

    def ap_at(curves, t):
        i = int(np.argmin(np.abs(thresholds - t)))
        if abs(thresholds[i] - t) > 1e-9:
            return float("nan")
        return float(curves[i].mean())

    curves, recalls = _evaluate_range(predictions, gts, sigmas, thresholds, AREA_RANGES["all"])
    curves_m, recalls_m = _evaluate_range(predictions, gts, sigmas, thresholds, AREA_RANGES["M"])
    curves_l, recalls_l = _evaluate_range(predictions, gts, sigmas, thresholds, AREA_RANGES["L"])
    crowd = {}
    if crowd_indices is not None and all(c is not None for c in crowd_indices):
        for name, (lo, hi) in CROWD_RANGES.items():
            images = {k for k, c in enumerate(crowd_indices) if lo <= c < hi}
            c, _ = _evaluate_range(predictions, gts, sigmas, thresholds, AREA_RANGES["all"], images)
            crowd[name] = float(c.mean(axis=1).mean())
    return EvalReport(
        AP=float(curves.mean(axis=1).mean()),
        AP50=ap_at(curves, 0.5),
        AP75=ap_at(curves, 0.75),
        AP_M=float(curves_m.mean(axis=1).mean()),
        AP_L=float(curves_l.mean(axis=1).mean()),
        AR=float(recalls.mean()),
        AR_M=float(recalls_m.mean()),
        AR_L=float(recalls_l.mean()),
        crowd=crowd,
        thresholds=[float(t) for t in thresholds],
        precision=curves.tolist(),
        recall=recalls.tolist(),
    )


def _ground_truth_lists(ground_truth) -> List[List[InstanceAnnotation]]:
    samples = getattr(ground_truth, "samples", ground_truth)
    out = []
    for s in samples:
        out.append(list(s.instances) if hasattr(s, "instances") else list(s))
    return out


def dump_predictions(predictions, sample_ids) -> list:
    """COCO-results-like records: one per predicted pose."""
    return [
        {"image_id": sid, "category_id": 1, **p.to_dict()}
        for sid, preds in zip(sample_ids, predictions)
        for p in preds
    ]
