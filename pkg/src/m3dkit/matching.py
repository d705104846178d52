"""Prediction-to-ground-truth assignment combining class, 2D IoU and MGIoU cues.

Scores follow s2d = p^alpha * iou^beta and s2d3d = s2d * mgiou^gamma with the
clamped MGIoU factor. Candidate anchors are the grid centers inside the GT 2D
box. Selection is deterministic: ties break to the lower anchor flat index,
then the lower GT index, so results are reproducible against a brute-force
oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detections import GroundTruthObject, Prediction
from .geometry import Box2D, iou_2d
from .mgiou import mgiou_clamped

ONE_TO_ONE = "one_to_one"
ONE_TO_MANY = "one_to_many"


@dataclass(frozen=True)
class MatchConfig:
    """Score exponents and the one-to-many candidate budget."""

    alpha: float = 0.5
    beta: float = 1.0
    gamma: float = 1.0
    topk: int = 10

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("score exponents must be non-negative")
        if self.topk < 1:
            raise ValueError("topk must be >= 1")


@dataclass
class AssignmentResult:
    """Matched (gt_index, anchor_index, score) triples plus leftovers."""

    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_gt: list[int] = field(default_factory=list)

    def anchor_of(self, gt_index: int) -> int | None:
        for j, i, _ in self.pairs:
            if j == gt_index:
                return i
        return None


def anchor_centers(height: int, width: int, stride: int) -> np.ndarray:
    """Pixel centers of a stride-s grid, flat order row-major: index = r*W + c."""
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([(cc.ravel() + 0.5) * stride, (rr.ravel() + 0.5) * stride], axis=1)


def candidate_anchors(gt: Box2D, centers: np.ndarray) -> np.ndarray:
    """Indices of anchor centers inside the GT box (boundary inclusive).

    A zero-area box has no interior and yields no candidates.
    """
    if gt.width <= 0.0 or gt.height <= 0.0:
        return np.empty(0, dtype=np.intp)
    inside = (
        (centers[:, 0] >= gt.x1)
        & (centers[:, 0] <= gt.x2)
        & (centers[:, 1] >= gt.y1)
        & (centers[:, 1] <= gt.y2)
    )
    return np.flatnonzero(inside)


def score_2d(p: float, iou: float, cfg: MatchConfig) -> float:
    """p^alpha * iou^beta with 0^0 defined as 1."""
    return float(p) ** cfg.alpha * float(iou) ** cfg.beta


def score_2d3d(s2d: float, mgiou_pos: float, cfg: MatchConfig) -> float:
    """s2d * mgiou_pos^gamma (mgiou_pos already clamped to [0, 1])."""
    return s2d * float(mgiou_pos) ** cfg.gamma


def build_score_matrix(
    gts: list[GroundTruthObject],
    predictions: list[Prediction],
    centers: np.ndarray,
    cfg: MatchConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense (n_gt, n_anchor) score matrix and boolean candidate mask.

    Scores are only evaluated at candidate anchors; everything else is 0.
    """
    n_gt, n_anchor = len(gts), len(predictions)
    scores = np.zeros((n_gt, n_anchor))
    candidates = np.zeros((n_gt, n_anchor), dtype=bool)
    for j, gt in enumerate(gts):
        for i in candidate_anchors(gt.box2d, centers):
            pred = predictions[i]
            s2d = score_2d(pred.class_probs[gt.class_id], iou_2d(pred.box2d, gt.box2d), cfg)
            scores[j, i] = score_2d3d(s2d, mgiou_clamped(pred.box3d, gt.box3d), cfg)
            candidates[j, i] = True
    return scores, candidates


def assign_from_scores(
    scores: np.ndarray, candidates: np.ndarray, topk: int, mode: str
) -> AssignmentResult:
    """Selection core shared by assign() and the score-level property tests."""
    n_gt = scores.shape[0]
    result = AssignmentResult()
    if mode == ONE_TO_ONE:
        # Global greedy matching == "winner keeps the anchor, loser retries
        # with its next-best" iterated to a fixed point.
        entries = [
            (float(scores[j, i]), int(i), int(j))
            for j in range(n_gt)
            for i in np.flatnonzero(candidates[j])
        ]
        entries.sort(key=lambda e: (-e[0], e[1], e[2]))
        gt_done = [False] * n_gt
        anchor_done: set[int] = set()
        for s, i, j in entries:
            if gt_done[j] or i in anchor_done:
                continue
            result.pairs.append((j, i, s))
            gt_done[j] = True
            anchor_done.add(i)
        result.pairs.sort(key=lambda p: p[0])
        result.unmatched_gt = [j for j in range(n_gt) if not gt_done[j]]
    elif mode == ONE_TO_MANY:
        claims: dict[int, list[tuple[float, int]]] = {}
        per_gt: dict[int, list[tuple[int, float]]] = {}
        for j in range(n_gt):
            cand = [(float(scores[j, i]), int(i)) for i in np.flatnonzero(candidates[j])]
            cand.sort(key=lambda e: (-e[0], e[1]))
            for s, i in cand[:topk]:
                claims.setdefault(i, []).append((s, j))
        for i, claimants in claims.items():
            s, j = min(claimants, key=lambda e: (-e[0], e[1]))  # best score, then lower gt
            per_gt.setdefault(j, []).append((i, s))
        for j in sorted(per_gt):
            for i, s in sorted(per_gt[j], key=lambda e: (-e[1], e[0])):
                result.pairs.append((j, i, s))
        result.unmatched_gt = [j for j in range(n_gt) if j not in per_gt]
    else:
        raise ValueError(f"unknown assignment mode: {mode!r}")
    return result


def assign(
    gts: list[GroundTruthObject],
    predictions: list[Prediction],
    centers: np.ndarray,
    cfg: MatchConfig,
    mode: str = ONE_TO_ONE,
) -> AssignmentResult:
    """Assign predictions to ground truths.

    one_to_one gives each GT at most one anchor and each anchor at most one
    GT; one_to_many keeps up to cfg.topk anchors per GT, resolving anchors
    claimed by several GTs to the higher-scoring one (no refill).
    """
    scores, candidates = build_score_matrix(gts, predictions, centers, cfg)
    topk = 1 if mode == ONE_TO_ONE else cfg.topk
    return assign_from_scores(scores, candidates, topk, mode)


def build_cls_targets(
    result: AssignmentResult, gts: list[GroundTruthObject], n_anchors: int, n_classes: int
) -> np.ndarray:
    """Hard classification targets: 1 at assigned (anchor, gt class), else 0."""
    targets = np.zeros((n_anchors, n_classes))
    for j, i, _ in result.pairs:
        targets[i, gts[j].class_id] = 1.0
    return targets
