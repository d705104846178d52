"""KITTI-protocol average precision (R40) for 3D and birds-eye-view IoU.

Difficulty gating, greedy confidence-ordered matching, and 40-point
interpolated precision follow the official KITTI object devkit conventions.
Ground truths above the evaluated difficulty are don't-care: detections
matching them are discarded rather than counted as false positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .detections import Detection, GroundTruthObject
from .geometry import iou_3d, rotated_iou_bev

# Thresholds from the KITTI object devkit: minimum 2D box height (px),
# maximum occlusion state, maximum truncation, per difficulty level.
MIN_HEIGHT = (40.0, 25.0, 25.0)
MAX_OCCLUSION = (0, 1, 2)
MAX_TRUNCATION = (0.15, 0.30, 0.50)

N_RECALL_POINTS = 40
RECALL_POINTS = np.arange(1, N_RECALL_POINTS + 1) / N_RECALL_POINTS

TP, FP, DISCARD = 1, 0, -1

METRIC_3D = "3d"
METRIC_BEV = "bev"


class Difficulty(IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2


def difficulty_filter(gt: GroundTruthObject) -> Difficulty | None:
    """Strictest difficulty the object satisfies; None when it fails Hard."""
    height = gt.box2d.height
    for level in Difficulty:
        if (
            height >= MIN_HEIGHT[level]
            and gt.occlusion <= MAX_OCCLUSION[level]
            and gt.truncation <= MAX_TRUNCATION[level]
        ):
            return level
    return None


def match_for_pr(
    detections: list[Detection],
    gts: list[GroundTruthObject],
    eligible: list[bool],
    iou_fn,
    threshold: float,
) -> list[int]:
    """Greedy TP/FP/DISCARD flags for confidence-sorted detections.

    Each detection takes the highest-IoU unmatched eligible GT at or above
    the threshold (TP); failing that, an overlap with an ineligible GT
    discards it; otherwise it is a FP.
    """
    matched = [False] * len(gts)
    flags = []
    for det in detections:
        best_iou, best_j = 0.0, -1
        best_ignored = 0.0
        for j, gt in enumerate(gts):
            iou = iou_fn(det.box3d, gt.box3d)
            if eligible[j] and not matched[j]:
                if iou > best_iou:
                    best_iou, best_j = iou, j
            elif not eligible[j]:
                best_ignored = max(best_ignored, iou)
        if best_j >= 0 and best_iou >= threshold:
            matched[best_j] = True
            flags.append(TP)
        elif best_ignored >= threshold:
            flags.append(DISCARD)
        else:
            flags.append(FP)
    return flags


def pr_curve_r40(flags: list[int], n_gt: int) -> np.ndarray:
    """Interpolated precision at the 40 recall points {1/40, ..., 1}."""
    precisions = np.zeros(N_RECALL_POINTS)
    if n_gt <= 0:
        return precisions
    kept = [f for f in flags if f != DISCARD]
    tp = np.cumsum([f == TP for f in kept])
    fp = np.cumsum([f == FP for f in kept])
    if len(kept) == 0:
        return precisions
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    for i, r in enumerate(RECALL_POINTS):
        at_least = precision[recall >= r - 1e-12]
        precisions[i] = at_least.max() if at_least.size else 0.0
    return precisions


def ap_r40(flags: list[int], n_gt: int) -> float:
    """Mean interpolated precision over the 40 recall points, in percent."""
    return float(pr_curve_r40(flags, n_gt).mean() * 100.0)


@dataclass
class EvalEntry:
    class_name: str
    difficulty: str
    metric: str
    ap: float
    n_gt: int
    precisions: np.ndarray


@dataclass
class EvalReport:
    """AP and PR curves per (class, difficulty, metric)."""

    entries: list[EvalEntry] = field(default_factory=list)

    def get(self, class_name: str, difficulty: str, metric: str) -> EvalEntry:
        for e in self.entries:
            if (e.class_name, e.difficulty, e.metric) == (class_name, difficulty, metric):
                return e
        raise KeyError((class_name, difficulty, metric))

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "results": [
                {
                    "class": e.class_name,
                    "difficulty": e.difficulty,
                    "metric": e.metric,
                    "ap": e.ap,
                    "n_gt": e.n_gt,
                    "precision": [float(p) for p in e.precisions],
                }
                for e in self.entries
            ],
        }


_METRIC_FNS = {METRIC_3D: iou_3d, METRIC_BEV: rotated_iou_bev}


def evaluate(
    gts_per_image: list[list[GroundTruthObject]],
    detections_per_image: list[list[Detection]],
    class_names: list[str],
    iou_thresholds: dict[str, float],
) -> EvalReport:
    """Full evaluation over a dataset.

    Matching runs per image in descending confidence order; the flag streams
    are merged across images by (confidence, image, detection) before PR
    accumulation, so results are independent of image processing order.
    """
    if len(gts_per_image) != len(detections_per_image):
        raise ValueError("need one detection list per image")
    report = EvalReport()
    levels_per_image = [[difficulty_filter(gt) for gt in gts] for gts in gts_per_image]
    for class_id, class_name in enumerate(class_names):
        if class_name not in iou_thresholds:
            raise ValueError(f"no IoU threshold configured for class {class_name!r}")
        threshold = iou_thresholds[class_name]
        for metric, iou_fn in _METRIC_FNS.items():
            for difficulty in Difficulty:
                merged: list[tuple[float, int, int, int]] = []  # (-conf, img, det, flag)
                n_gt = 0
                for img, (gts, dets) in enumerate(zip(gts_per_image, detections_per_image)):
                    cls_idx = [j for j, gt in enumerate(gts) if gt.class_id == class_id]
                    cls_gts = [gts[j] for j in cls_idx]
                    eligible = [
                        levels_per_image[img][j] is not None and levels_per_image[img][j] <= difficulty
                        for j in cls_idx
                    ]
                    n_gt += sum(eligible)
                    order = sorted(
                        (i for i, d in enumerate(dets) if d.class_id == class_id),
                        key=lambda i: (-dets[i].confidence, i),
                    )
                    flags = match_for_pr(
                        [dets[i] for i in order], cls_gts, eligible, iou_fn, threshold
                    )
                    for rank, i in enumerate(order):
                        merged.append((-dets[i].confidence, img, i, flags[rank]))
                merged.sort()
                flags = [flag for *_key, flag in merged]
                precisions = pr_curve_r40(flags, n_gt)
                report.entries.append(
                    EvalEntry(
                        class_name=class_name,
                        difficulty=difficulty.name.lower(),
                        metric=metric,
                        ap=float(precisions.mean() * 100.0),
                        n_gt=n_gt,
                        precisions=precisions,
                    )
                )
    return report
