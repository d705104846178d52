"""Seeded synthetic scenes and perturbed detections for oracle and AP tests.

Scenes are fully deterministic per (spec, seed): objects are sampled in front
of the camera (z > 1 m), their 2D boxes are the exact projected hulls of the
3D corners, and everything satisfies the box invariants. Perturbation jitters
depth / dims / yaw / lateral center, drops objects (false negatives) and
injects spurious boxes (false positives); detection confidence decreases with
the injected error so PR curves are non-degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .detections import Detection, GroundTruthObject
from .geometry import Box2D, Box3D, CameraIntrinsics, corners_3d, wrap_angle, yaw_to_rotation

DEFAULT_DIM_RANGES = {
    "Car": ((1.4, 1.8), (1.5, 1.9), (3.4, 4.6)),
    "Pedestrian": ((1.5, 1.9), (0.5, 0.8), (0.6, 1.0)),
    "Cyclist": ((1.5, 1.9), (0.4, 0.8), (1.5, 2.0)),
}

# Error normalizers for the synthetic confidence model.
_ERR_SCALES = (1.0, 0.3, 0.25, 0.5)  # z, dims, yaw, lateral center


@dataclass(frozen=True)
class NoiseSpec:
    sigma_z: float = 0.0
    sigma_dims: float = 0.0
    sigma_yaw: float = 0.0
    sigma_center: float = 0.0
    fp_rate: float = 0.0
    fn_rate: float = 0.0

    def __post_init__(self):
        for name in ("sigma_z", "sigma_dims", "sigma_yaw", "sigma_center"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("fp_rate", "fn_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_objects: int = 5
    depth_range: tuple[float, float] = (8.0, 25.0)
    yaw_range: tuple[float, float] = (-math.pi, math.pi)
    classes: tuple[str, ...] = ("Car",)
    dim_ranges: dict[str, tuple] = field(default_factory=lambda: dict(DEFAULT_DIM_RANGES))
    image_size: tuple[int, int] = (1280, 384)
    intrinsics: CameraIntrinsics = CameraIntrinsics(700.0, 700.0, 640.0, 192.0)
    noise: NoiseSpec = NoiseSpec()

    def __post_init__(self):
        if self.depth_range[0] <= 1.0 or self.depth_range[1] < self.depth_range[0]:
            raise ValueError("depth range must lie above 1 m and be non-empty")
        for cls in self.classes:
            if cls not in self.dim_ranges:
                raise ValueError(f"no dimension ranges configured for class {cls!r}")


def _projected_hull(box3d: Box3D, intrinsics: CameraIntrinsics) -> Box2D:
    corners = corners_3d(box3d)
    us = intrinsics.fx * corners[:, 0] / corners[:, 2] + intrinsics.cx
    vs = intrinsics.fy * corners[:, 1] / corners[:, 2] + intrinsics.cy
    return Box2D(float(us.min()), float(vs.min()), float(us.max()), float(vs.max()))


def generate_scene(spec: SceneSpec) -> tuple[list[GroundTruthObject], CameraIntrinsics]:
    """Deterministic scene: objects in view, 2D boxes = projected corner hulls."""
    rng = np.random.default_rng(spec.seed)
    width, height = spec.image_size
    k = spec.intrinsics
    gts: list[GroundTruthObject] = []
    for _ in range(spec.n_objects):
        for _attempt in range(200):
            class_id = int(rng.integers(len(spec.classes)))
            ranges = spec.dim_ranges[spec.classes[class_id]]
            h, w, l = (float(rng.uniform(lo, hi)) for lo, hi in ranges)
            yaw = float(rng.uniform(*spec.yaw_range))
            z = float(rng.uniform(*spec.depth_range))
            # Keep the projected hull inside the image: sample the projected
            # center away from the borders by the worst-case half extents.
            radius = math.sqrt(l * l + w * w) / 2.0
            mu = k.fx * radius / (z - radius) if z > radius else float(width)
            mv = k.fy * (h / 2.0) / (z - radius) if z > radius else float(height)
            if 2 * mu >= width or 2 * mv >= height:
                continue
            u = float(rng.uniform(mu, width - mu))
            v = float(rng.uniform(mv, height - mv))
            x = (u - k.cx) * z / k.fx
            y = (v - k.cy) * z / k.fy
            box3d = Box3D(np.array([x, y, z]), (h, w, l), yaw_to_rotation(yaw))
            if np.any(corners_3d(box3d)[:, 2] <= 1.0):
                continue
            box2d = _projected_hull(box3d, k)
            if box2d.x1 < 0 or box2d.y1 < 0 or box2d.x2 > width or box2d.y2 > height:
                continue
            gts.append(GroundTruthObject(class_id=class_id, box2d=box2d, box3d=box3d))
            break
        else:
            raise RuntimeError("could not place an object inside the view; loosen the spec")
    return gts, k


def _confidence(error: float) -> float:
    # Rescaled sigmoid of the negative error: exactly 1 at zero error.
    return 2.0 / (1.0 + math.exp(error))


def perturb(
    gts: list[GroundTruthObject],
    noise: NoiseSpec,
    seed: int,
    intrinsics: CameraIntrinsics,
) -> list[Detection]:
    """Jittered detections for a ground-truth scene.

    False-positive draws use an independent substream so regenerating with
    fp_rate=0 and the same seed reproduces the real detections bit-for-bit.
    """
    rng = np.random.default_rng([seed, 1])
    rng_fp = np.random.default_rng([seed, 2])
    detections: list[Detection] = []
    for gt in gts:
        if rng.random() < noise.fn_rate:
            continue
        dz = float(rng.normal(0.0, noise.sigma_z)) if noise.sigma_z > 0 else 0.0
        dxy = rng.normal(0.0, noise.sigma_center, 2) if noise.sigma_center > 0 else np.zeros(2)
        ddims = rng.normal(0.0, noise.sigma_dims, 3) if noise.sigma_dims > 0 else np.zeros(3)
        dyaw = float(rng.normal(0.0, noise.sigma_yaw)) if noise.sigma_yaw > 0 else 0.0
        center = gt.box3d.center + np.array([dxy[0], dxy[1], dz])
        if center[2] <= 1.0:
            center = center.copy()
            center[2] = 1.0 + abs(center[2] - 1.0)  # keep detections in front of the camera
        dims = tuple(np.maximum(np.array(gt.box3d.dims) + ddims, 0.1))
        yaw = wrap_angle(gt.box3d.yaw + dyaw)
        box3d = Box3D(center, dims, yaw_to_rotation(yaw))
        error = (
            abs(dz) / _ERR_SCALES[0]
            + float(np.linalg.norm(ddims)) / _ERR_SCALES[1]
            + abs(dyaw) / _ERR_SCALES[2]
            + float(np.linalg.norm(dxy)) / _ERR_SCALES[3]
        )
        detections.append(
            Detection(
                class_id=gt.class_id,
                confidence=_confidence(error),
                box2d=_projected_hull(box3d, intrinsics),
                box3d=box3d,
                sigma=abs(dz) + 0.1,
            )
        )
    if noise.fp_rate > 0:
        for gt in gts:
            if rng_fp.random() >= noise.fp_rate:
                continue
            z = float(rng_fp.uniform(5.0, 40.0))
            center = np.array([float(rng_fp.uniform(-8.0, 8.0)), float(rng_fp.uniform(-1.0, 2.0)), z])
            dims = tuple(float(rng_fp.uniform(0.5, 4.0)) for _ in range(3))
            box3d = Box3D(center, dims, yaw_to_rotation(float(rng_fp.uniform(-math.pi, math.pi))))
            detections.append(
                Detection(
                    class_id=gt.class_id,
                    confidence=_confidence(1.5 + float(rng_fp.uniform(0.0, 1.5))),
                    box2d=_projected_hull(box3d, intrinsics),
                    box3d=box3d,
                    sigma=1.0,
                )
            )
    return detections
