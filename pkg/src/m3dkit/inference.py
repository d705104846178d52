"""Confidence-gated inference with an exactly equivalent dense reference path.

Pipeline: run the classification head densely, pick the top-k locations by
class confidence across both pyramid levels (stride-8 block first), gather
3x3 patches around them, and evaluate the regression heads only on those
patches. Because every head's receptive field is exactly the 3x3 patch and
both paths share the per-patch routine, gated and dense outputs are
bit-identical; there is no suppression stage afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detections import Detection
from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    OrientationMultiBin,
    allocentric_to_egocentric,
    backproject,
    gram_schmidt_6d,
    multibin_decode,
    yaw_to_rotation,
)
from .heads import (
    STRIDES,
    FeatureMapSet,
    HeadSet,
    eval_head_at_patch,
    eval_head_at_patch_tapped,
    flop_count_dense,
    flop_count_gated,
    head_forward,
    pad_map,
    patch_at,
    sigmoid,
)

DEPTH_FLOOR = 1e-3  # keeps decoding total under arbitrary weights
SIZE_FLOOR = 1e-3

MODE_DENSE = "dense"
MODE_GATED = "gated"


@dataclass(frozen=True)
class SelectedCenter:
    """A top-k location: pyramid level tag, grid coordinates, argmax class."""

    level: int
    row: int
    col: int
    class_id: int
    score: float


def dense_classify(features: FeatureMapSet, cls_params) -> dict[int, np.ndarray]:
    """Sigmoid class score maps per level, (n_classes, H, W) each."""
    return {s: sigmoid(head_forward(features.maps[s], cls_params)) for s in STRIDES}


def topk_select(score_maps: dict[int, np.ndarray], k: int) -> list[SelectedCenter]:
    """k best locations by max-over-class score.

    Scores of both levels are flattened row-major and concatenated stride-8
    first; ties break to the lower flat index. If k exceeds the location
    count, all locations are returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    best_scores, best_classes, tags = [], [], []
    for stride in STRIDES:
        maps = score_maps[stride]
        _, h, w = maps.shape
        best_scores.append(maps.max(axis=0).ravel())
        best_classes.append(maps.argmax(axis=0).ravel())
        rr, cc = np.divmod(np.arange(h * w), w)
        tags.append(np.stack([np.full(h * w, stride), rr, cc], axis=1))
    scores = np.concatenate(best_scores)
    classes = np.concatenate(best_classes)
    tags = np.concatenate(tags)
    order = np.argsort(-scores, kind="stable")[: min(k, scores.size)]
    return [
        SelectedCenter(int(tags[i, 0]), int(tags[i, 1]), int(tags[i, 2]), int(classes[i]), float(scores[i]))
        for i in order
    ]


def extract_patches(features: FeatureMapSet, centers: list[SelectedCenter]) -> np.ndarray:
    """(n, C, 3, 3) neighborhoods from each center's level, zero-padded at borders."""
    padded = {s: pad_map(features.maps[s]) for s in STRIDES}
    out = np.zeros((len(centers), features.channels, 3, 3), dtype=np.float32)
    for idx, ctr in enumerate(centers):
        h, w = features.shape(ctr.level)
        if not (0 <= ctr.row < h and 0 <= ctr.col < w):
            raise ValueError(f"center {ctr} out of bounds for level shape ({h}, {w})")
        out[idx] = patch_at(padded[ctr.level], ctr.row, ctr.col)
    return out


def gated_heads(
    patches: np.ndarray, head_set: HeadSet, tap_depth: bool = False
) -> dict[str, np.ndarray]:
    """Evaluate every regression head on every patch: {head: (n, out)}.

    With tap_depth, the result also carries "depth_tap": the (n, 64) hidden
    vectors feeding the depth head's final 1x1 convolution.
    """
    n = patches.shape[0]
    raw = {
        name: np.empty((n, params.out_channels), dtype=np.float32)
        for name, params in head_set.regression.items()
    }
    if tap_depth:
        raw["depth_tap"] = np.empty((n, 64), dtype=np.float32)
    for i in range(n):
        patch = np.ascontiguousarray(patches[i])
        for name, params in head_set.regression.items():
            if name == "depth" and tap_depth:
                raw[name][i], raw["depth_tap"][i] = eval_head_at_patch_tapped(params, patch)
            else:
                raw[name][i] = eval_head_at_patch(params, patch)
    return raw


def dense_regression(features: FeatureMapSet, head_set: HeadSet) -> dict[int, dict[str, np.ndarray]]:
    """Reference path: every regression head densely on every level."""
    return {
        s: {name: head_forward(features.maps[s], params) for name, params in head_set.regression.items()}
        for s in STRIDES
    }


def gather_dense(dense_maps: dict[int, dict[str, np.ndarray]], centers: list[SelectedCenter]) -> dict[str, np.ndarray]:
    """Sample dense maps at the selected centers into the gated layout."""
    raw = {}
    head_names = list(next(iter(dense_maps.values())).keys())
    for name in head_names:
        rows = [dense_maps[c.level][name][:, c.row, c.col] for c in centers]
        raw[name] = np.stack(rows) if rows else np.empty((0, 0), dtype=np.float32)
    return raw


def decode_detections(
    raw: dict[str, np.ndarray],
    centers: list[SelectedCenter],
    intrinsics: CameraIntrinsics,
    class_mean_dims: np.ndarray,
    orientation_mode: str = "multibin",
) -> list[Detection]:
    """Decode raw head outputs at selected centers into detections.

    Offsets and 2D sizes are in feature-grid cells, scaled by the level
    stride. The projected 3D center is backprojected at the predicted depth;
    sigma = exp(uncertainty). No suppression is applied. Predicted depths and
    extents are floored at small positives so decoding stays total.
    """
    mean_dims = np.asarray(class_mean_dims, dtype=np.float64)
    detections = []
    for i, ctr in enumerate(centers):
        for name in raw:
            if not np.all(np.isfinite(raw[name][i])):
                raise ValueError(f"non-finite raw output in head {name!r} at center {i}")
        stride = float(ctr.level)
        anchor = np.array([(ctr.col + 0.5) * stride, (ctr.row + 0.5) * stride])

        o2d = raw["offset_2d"][i].astype(np.float64) * stride
        size2d = raw["size_2d"][i].astype(np.float64) * stride  # (height, width)
        h2d = max(size2d[0], 0.0)
        w2d = max(size2d[1], 0.0)
        c2d = anchor + o2d
        box2d = Box2D(c2d[0] - w2d / 2, c2d[1] - h2d / 2, c2d[0] + w2d / 2, c2d[1] + h2d / 2)

        proj_center = anchor + raw["offset_3d"][i].astype(np.float64) * stride
        z = max(float(raw["depth"][i, 0]), DEPTH_FLOOR)
        sigma = float(np.exp(raw["uncertainty"][i].astype(np.float64)[0]))
        dims = np.maximum(mean_dims[ctr.class_id] + raw["size_3d"][i].astype(np.float64), SIZE_FLOOR)
        center3d = backproject(proj_center, z, intrinsics)

        if orientation_mode == "multibin":
            logits = raw["multibin"][i, :12]
            residuals = raw["multibin"][i, 12:].astype(np.float64)
            bin_idx = int(np.argmax(logits))
            theta = multibin_decode(OrientationMultiBin(bin_idx, float(residuals[bin_idx])))
            rotation = yaw_to_rotation(theta)
        elif orientation_mode == "so3":
            r_alloc = gram_schmidt_6d(raw["so3"][i].astype(np.float64))
            rotation = allocentric_to_egocentric(r_alloc, center3d)
        else:
            raise ValueError(f"unknown orientation mode: {orientation_mode!r}")

        detections.append(
            Detection(
                class_id=ctr.class_id,
                confidence=ctr.score,
                box2d=box2d,
                box3d=Box3D(center3d, tuple(dims), rotation),
                sigma=sigma,
            )
        )
    return detections


def infer(
    features: FeatureMapSet,
    head_set: HeadSet,
    intrinsics: CameraIntrinsics,
    class_mean_dims: np.ndarray,
    k: int,
    mode: str = MODE_GATED,
    orientation_mode: str = "multibin",
) -> list[Detection]:
    """End-to-end inference; dense and gated modes return identical detections."""
    score_maps = dense_classify(features, head_set.cls)
    centers = topk_select(score_maps, k)
    if mode == MODE_GATED:
        raw = gated_heads(extract_patches(features, centers), head_set)
    elif mode == MODE_DENSE:
        raw = gather_dense(dense_regression(features, head_set), centers)
    else:
        raise ValueError(f"unknown inference mode: {mode!r}")
    return decode_detections(raw, centers, intrinsics, class_mean_dims, orientation_mode)


def stage_mac_counts(head_set: HeadSet, features: FeatureMapSet, k: int) -> dict[str, int]:
    """Closed-form multiply-accumulate counts for the benchmark stages."""
    cls_macs = sum(flop_count_dense(head_set.cls, *features.shape(s)) for s in STRIDES)
    dense_macs = sum(
        flop_count_dense(params, *features.shape(s))
        for s in STRIDES
        for params in head_set.regression.values()
    )
    gated_macs = sum(flop_count_gated(params, min(k, features.total_locations))
                     for params in head_set.regression.values())
    return {
        "classification_dense": cls_macs,
        "patch_extraction": 0,
        "regression_dense": dense_macs,
        "regression_gated": gated_macs,
        "decoding": 0,
    }
