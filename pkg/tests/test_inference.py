"""Gated inference: selection rules, patch extraction, exact dense equivalence."""

import numpy as np
import pytest

from m3dkit.detections import detection_sets_equal
from m3dkit.geometry import CameraIntrinsics
from m3dkit.heads import FeatureMapSet, head_forward, random_head_set, sigmoid
from m3dkit.inference import (
    MODE_DENSE,
    MODE_GATED,
    SelectedCenter,
    decode_detections,
    dense_classify,
    dense_regression,
    extract_patches,
    gated_heads,
    gather_dense,
    infer,
    stage_mac_counts,
    topk_select,
)

K = CameraIntrinsics(700.0, 700.0, 640.0, 192.0)
MEAN_DIMS = np.array([[1.5, 1.6, 3.9], [1.76, 0.66, 0.84], [1.74, 0.6, 1.76]])


def small_setup(seed=0, channels=8, n_classes=3, shape8=(6, 9)):
    rng = np.random.default_rng(seed)
    head_set = random_head_set(rng, channels, n_classes)
    h8, w8 = shape8
    features = FeatureMapSet(
        maps={
            8: rng.normal(0, 1, (channels, h8, w8)).astype(np.float32),
            16: rng.normal(0, 1, (channels, max(h8 // 2, 1), max(w8 // 2, 1))).astype(np.float32),
        }
    )
    return head_set, features


class TestDenseClassify:
    def test_matches_head_forward_plus_sigmoid(self):
        head_set, features = small_setup(1)
        maps = dense_classify(features, head_set.cls)
        for s in (8, 16):
            assert np.array_equal(maps[s], sigmoid(head_forward(features.maps[s], head_set.cls)))

    def test_scores_in_open_unit_interval(self):
        head_set, features = small_setup(2)
        for m in dense_classify(features, head_set.cls).values():
            assert np.all(m > 0.0) and np.all(m < 1.0)

    def test_zero_weights_constant_sigmoid_bias(self):
        from m3dkit.heads import HeadParams

        params = HeadParams(
            w3=np.zeros((64, 4, 3, 3)), b3=np.zeros(64), w1a=np.zeros((64, 64)),
            b1a=np.zeros(64), w1b=np.zeros((2, 64)), b1b=np.array([0.3, -1.2]),
        )
        features = FeatureMapSet(maps={8: np.random.default_rng(3).normal(0, 1, (4, 4, 4)),
                                       16: np.zeros((4, 2, 2))})
        maps = dense_classify(features, params)
        expected = sigmoid(np.array([0.3, -1.2], dtype=np.float32))
        assert np.all(maps[8][0] == expected[0]) and np.all(maps[8][1] == expected[1])


class TestTopK:
    def test_unique_max(self):
        maps = {8: np.zeros((1, 3, 4), dtype=np.float32), 16: np.zeros((1, 2, 2), dtype=np.float32)}
        maps[8][0, 1, 2] = 0.9
        top = topk_select(maps, 1)
        assert top[0] == SelectedCenter(8, 1, 2, 0, pytest.approx(0.9))

    def test_all_equal_ties_to_flat_indices(self):
        maps = {8: np.full((1, 2, 3), 0.5, dtype=np.float32), 16: np.full((1, 1, 1), 0.5, dtype=np.float32)}
        top = topk_select(maps, 3)
        assert [(c.level, c.row, c.col) for c in top] == [(8, 0, 0), (8, 0, 1), (8, 0, 2)]

    def test_two_level_hand_ranking(self):
        maps = {8: np.zeros((2, 1, 2), dtype=np.float32), 16: np.zeros((2, 1, 2), dtype=np.float32)}
        maps[8][0, 0, 0] = 0.3   # flat 0, class 0
        maps[8][1, 0, 1] = 0.8   # flat 1, class 1
        maps[16][0, 0, 0] = 0.5  # flat 2 (second block), class 0
        maps[16][1, 0, 1] = 0.8  # flat 3, class 1 -> ties with stride-8 flat 1
        top = topk_select(maps, 4)
        assert [(c.level, c.col, c.class_id) for c in top] == [
            (8, 1, 1), (16, 1, 1), (16, 0, 0), (8, 0, 0),
        ]

    def test_k_exceeding_locations_returns_all(self):
        maps = {8: np.zeros((1, 2, 2), dtype=np.float32), 16: np.zeros((1, 1, 1), dtype=np.float32)}
        assert len(topk_select(maps, 99)) == 5

    def test_k_below_one_rejected(self):
        with pytest.raises(ValueError):
            topk_select({8: np.zeros((1, 1, 1)), 16: np.zeros((1, 1, 1))}, 0)


class TestPatches:
    def test_interior_center_is_raw_neighborhood(self):
        _, features = small_setup(4)
        centers = [SelectedCenter(8, 2, 3, 0, 1.0)]
        patch = extract_patches(features, centers)[0]
        assert np.array_equal(patch, features.maps[8][:, 1:4, 2:5])

    def test_corner_center_zero_padded(self):
        _, features = small_setup(5)
        patch = extract_patches(features, [SelectedCenter(8, 0, 0, 0, 1.0)])[0]
        assert np.all(patch[:, 0, :] == 0.0) and np.all(patch[:, :, 0] == 0.0)
        assert np.count_nonzero(patch[0]) <= 4  # 5 of 9 cells are padding
        assert np.array_equal(patch[:, 1:, 1:], features.maps[8][:, 0:2, 0:2])

    def test_patch_independent_of_other_centers(self):
        _, features = small_setup(6)
        a = extract_patches(features, [SelectedCenter(8, 2, 2, 0, 1.0)])[0]
        b = extract_patches(
            features,
            [SelectedCenter(16, 0, 0, 0, 1.0), SelectedCenter(8, 2, 2, 0, 1.0)],
        )[1]
        assert np.array_equal(a, b)

    def test_out_of_bounds_center_rejected(self):
        _, features = small_setup(7)
        with pytest.raises(ValueError):
            extract_patches(features, [SelectedCenter(8, 99, 0, 0, 1.0)])


class TestGatedDenseEquality:
    def test_every_location_matches_dense_bitwise(self):
        head_set, features = small_setup(8, shape8=(4, 5))
        dense_maps = dense_regression(features, head_set)
        centers = [
            SelectedCenter(s, r, c, 0, 1.0)
            for s in (8, 16)
            for r in range(features.shape(s)[0])
            for c in range(features.shape(s)[1])
        ]
        raw_gated = gated_heads(extract_patches(features, centers), head_set)
        raw_dense = gather_dense(dense_maps, centers)
        for name in raw_dense:
            assert np.array_equal(raw_gated[name], raw_dense[name]), name

    def test_k_all_reproduces_dense_map(self):
        head_set, features = small_setup(9, shape8=(3, 4))
        score_maps = dense_classify(features, head_set.cls)
        centers = topk_select(score_maps, features.total_locations)
        raw = gated_heads(extract_patches(features, centers), head_set)
        dense_maps = dense_regression(features, head_set)
        for idx, ctr in enumerate(centers):
            for name in head_set.regression:
                assert np.array_equal(raw[name][idx], dense_maps[ctr.level][name][:, ctr.row, ctr.col])


class TestDecode:
    def test_zero_offsets_anchor_formula(self):
        raw = {
            "offset_2d": np.zeros((1, 2), dtype=np.float32),
            "size_2d": np.ones((1, 2), dtype=np.float32),
            "offset_3d": np.zeros((1, 2), dtype=np.float32),
            "size_3d": np.zeros((1, 3), dtype=np.float32),
            "depth": np.full((1, 1), 10.0, dtype=np.float32),
            "uncertainty": np.zeros((1, 1), dtype=np.float32),
            "multibin": np.zeros((1, 24), dtype=np.float32),
            "so3": np.zeros((1, 6), dtype=np.float32),
        }
        centers = [SelectedCenter(8, 3, 2, 0, 0.7)]
        det = decode_detections(raw, centers, K, MEAN_DIMS)[0]
        anchor = (8 * (2 + 0.5), 8 * (3 + 0.5))
        assert det.box2d.center == anchor
        assert det.box2d.width == 8.0 and det.box2d.height == 8.0

    def test_depth_at_principal_point(self):
        raw = {
            "offset_2d": np.zeros((1, 2), dtype=np.float32),
            "size_2d": np.ones((1, 2), dtype=np.float32),
            "offset_3d": np.zeros((1, 2), dtype=np.float32),
            "size_3d": np.zeros((1, 3), dtype=np.float32),
            "depth": np.full((1, 1), 10.0, dtype=np.float32),
            "uncertainty": np.zeros((1, 1), dtype=np.float32),
            "multibin": np.zeros((1, 24), dtype=np.float32),
            "so3": np.zeros((1, 6), dtype=np.float32),
        }
        # intrinsics whose principal point sits exactly on the (23, 79) anchor
        k_anchor = CameraIntrinsics(700.0, 700.0, 636.0, 188.0)
        centers = [SelectedCenter(8, 23, 79, 1, 0.5)]
        det = decode_detections(raw, centers, k_anchor, MEAN_DIMS)[0]
        assert np.allclose(det.box3d.center, [0.0, 0.0, 10.0], atol=1e-12)
        assert det.sigma == 1.0
        assert det.box3d.dims == tuple(MEAN_DIMS[1])

    def test_nonfinite_raw_rejected(self):
        raw = {
            "offset_2d": np.array([[np.inf, 0.0]], dtype=np.float32),
            "size_2d": np.ones((1, 2), dtype=np.float32),
            "offset_3d": np.zeros((1, 2), dtype=np.float32),
            "size_3d": np.zeros((1, 3), dtype=np.float32),
            "depth": np.full((1, 1), 10.0, dtype=np.float32),
            "uncertainty": np.zeros((1, 1), dtype=np.float32),
            "multibin": np.zeros((1, 24), dtype=np.float32),
            "so3": np.zeros((1, 6), dtype=np.float32),
        }
        with pytest.raises(ValueError):
            decode_detections(raw, [SelectedCenter(8, 0, 0, 0, 0.5)], K, MEAN_DIMS)


class TestInfer:
    @pytest.mark.parametrize("orientation", ["multibin", "so3"])
    def test_dense_gated_equivalence(self, orientation):
        for seed in range(10):
            head_set, features = small_setup(seed)
            k = [1, 7, features.total_locations][seed % 3]
            gated = infer(features, head_set, K, MEAN_DIMS, k, MODE_GATED, orientation)
            dense = infer(features, head_set, K, MEAN_DIMS, k, MODE_DENSE, orientation)
            assert detection_sets_equal(gated, dense)

    def test_prefix_property(self):
        head_set, features = small_setup(11)
        top5 = infer(features, head_set, K, MEAN_DIMS, 5)
        top10 = infer(features, head_set, K, MEAN_DIMS, 10)
        assert detection_sets_equal(top5, top10[:5])

    def test_gated_macs_below_dense_when_k_small(self):
        head_set, features = small_setup(12)
        macs = stage_mac_counts(head_set, features, 5)
        assert macs["regression_gated"] < macs["regression_dense"]
        full = stage_mac_counts(head_set, features, features.total_locations)
        assert full["regression_gated"] == full["regression_dense"]

    def test_confidence_sorted_output(self):
        head_set, features = small_setup(13)
        dets = infer(features, head_set, K, MEAN_DIMS, 8)
        confs = [d.confidence for d in dets]
        assert confs == sorted(confs, reverse=True)
