"""Shared record types: ground-truth objects, per-anchor predictions, detections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box2D, Box3D


@dataclass(frozen=True, eq=False)
class GroundTruthObject:
    """A labeled object with the attributes difficulty filtering needs."""

    class_id: int
    box2d: Box2D
    box3d: Box3D
    truncation: float = 0.0
    occlusion: int = 0

    def __post_init__(self):
        if not 0.0 <= self.truncation <= 1.0:
            raise ValueError(f"truncation must be in [0, 1], got {self.truncation}")
        if self.occlusion not in (0, 1, 2, 3):
            raise ValueError(f"occlusion must be in {{0,1,2,3}}, got {self.occlusion}")


@dataclass(frozen=True, eq=False)
class Prediction:
    """Decoded per-anchor prediction used by matching and distillation pairing.

    depth_feature is the 64-vector tapped before the depth head's final 1x1
    convolution; it is only required on the distillation path.
    """

    class_probs: np.ndarray
    box2d: Box2D
    box3d: Box3D
    sigma: float = 1.0
    depth_feature: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.class_probs, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "class_probs", probs)
        if probs.size == 0 or np.any(probs < 0.0) or np.any(probs > 1.0):
            raise ValueError("class_probs must be a non-empty vector of probabilities")

    @property
    def z(self) -> float:
        return self.box3d.z


@dataclass(frozen=True, eq=False)
class Detection:
    """Final decoded detection."""

    class_id: int
    confidence: float
    box2d: Box2D
    box3d: Box3D
    sigma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def detections_equal(a: Detection, b: Detection) -> bool:
    """Bitwise equality of two detections (used by the gated/dense checker)."""
    return (
        a.class_id == b.class_id
        and a.confidence == b.confidence
        and a.sigma == b.sigma
        and (a.box2d.x1, a.box2d.y1, a.box2d.x2, a.box2d.y2)
        == (b.box2d.x1, b.box2d.y1, b.box2d.x2, b.box2d.y2)
        and a.box3d.dims == b.box3d.dims
        and np.array_equal(a.box3d.center, b.box3d.center)
        and np.array_equal(a.box3d.rotation, b.box3d.rotation)
    )


def detection_sets_equal(a: list[Detection], b: list[Detection]) -> bool:
    return len(a) == len(b) and all(detections_equal(x, y) for x, y in zip(a, b))
