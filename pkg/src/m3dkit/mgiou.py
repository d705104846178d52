"""Marginalized generalized IoU between 3D boxes.

The surrogate projects both boxes' corner sets onto each of the six
principal axes (three per box), scores each axis with 1D generalized IoU,
and averages. It stays informative when boxes do not intersect and is
invariant to uniformly scaling both boxes, which is what makes it usable
as a matching factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, corners_3d


@dataclass(frozen=True)
class Interval:
    """1D projection extent."""

    lo: float
    hi: float

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError(f"interval endpoints out of order: [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo


def giou_1d(a: Interval, b: Interval) -> float:
    """1D generalized IoU: IoU minus the enclosed-gap fraction, in (-1, 1].

    Two coincident degenerate points score 1; otherwise zero-length unions
    fall out of the formula as -gap/span (= -1 for two distinct points).
    """
    span = max(a.hi, b.hi) - min(a.lo, b.lo)
    if span <= 0.0:
        return 1.0  # identical points
    inter = max(0.0, min(a.hi, b.hi) - max(a.lo, b.lo))
    union = a.length + b.length - inter
    iou = inter / union if union > 0.0 else 0.0
    return iou - (span - union) / span


def project_corners(corners: np.ndarray, axis: np.ndarray) -> Interval:
    """Projection interval of a corner set onto a (unit) axis."""
    dots = corners @ axis
    return Interval(float(dots.min()), float(dots.max()))


def mgiou_3d(a: Box3D, b: Box3D) -> float:
    """Mean 1D GIoU of both corner sets over the six principal axes."""
    ca, cb = corners_3d(a), corners_3d(b)
    axes = np.concatenate([a.rotation.T, b.rotation.T])  # rows = column axes of each box
    values = [giou_1d(project_corners(ca, axis), project_corners(cb, axis)) for axis in axes]
    # fsum is correctly rounded, so the result is independent of axis order
    # and mgiou_3d(a, b) == mgiou_3d(b, a) bitwise.
    return math.fsum(values) / 6.0


def mgiou_clamped(a: Box3D, b: Box3D) -> float:
    """Non-negative matching factor max(0, mgiou_3d)."""
    return max(0.0, mgiou_3d(a, b))
