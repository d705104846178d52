"""Scene generator: determinism, projection consistency, noise statistics."""

import math

import numpy as np
import pytest

from m3dkit.geometry import corners_3d, project
from m3dkit.synthetic import NoiseSpec, SceneSpec, generate_scene, perturb


class TestGenerateScene:
    def test_zero_objects(self):
        gts, _ = generate_scene(SceneSpec(seed=0, n_objects=0))
        assert gts == []

    def test_same_seed_identical(self):
        a, _ = generate_scene(SceneSpec(seed=5, n_objects=6))
        b, _ = generate_scene(SceneSpec(seed=5, n_objects=6))
        assert len(a) == len(b)
        for ga, gb in zip(a, b):
            assert np.array_equal(ga.box3d.center, gb.box3d.center)
            assert ga.box3d.dims == gb.box3d.dims
            assert (ga.box2d.x1, ga.box2d.y2) == (gb.box2d.x1, gb.box2d.y2)

    def test_different_seed_differs(self):
        a, _ = generate_scene(SceneSpec(seed=1, n_objects=4))
        b, _ = generate_scene(SceneSpec(seed=2, n_objects=4))
        assert any(not np.array_equal(ga.box3d.center, gb.box3d.center) for ga, gb in zip(a, b))

    def test_box2d_equals_projected_hull(self):
        gts, intrinsics = generate_scene(SceneSpec(seed=7, n_objects=8))
        for gt in gts:
            pixels = np.array([project(c, intrinsics) for c in corners_3d(gt.box3d)])
            assert abs(pixels[:, 0].min() - gt.box2d.x1) < 0.5
            assert abs(pixels[:, 1].min() - gt.box2d.y1) < 0.5
            assert abs(pixels[:, 0].max() - gt.box2d.x2) < 0.5
            assert abs(pixels[:, 1].max() - gt.box2d.y2) < 0.5

    def test_objects_in_front_and_in_view(self):
        spec = SceneSpec(seed=9, n_objects=10, depth_range=(5.0, 40.0))
        gts, _ = generate_scene(spec)
        width, height = spec.image_size
        for gt in gts:
            assert np.all(corners_3d(gt.box3d)[:, 2] > 1.0)
            assert 0 <= gt.box2d.x1 and gt.box2d.x2 <= width
            assert 0 <= gt.box2d.y1 and gt.box2d.y2 <= height

    def test_invalid_depth_range_rejected(self):
        with pytest.raises(ValueError):
            SceneSpec(depth_range=(0.5, 10.0))


class TestPerturb:
    def test_zero_noise_identity_confidence_one(self):
        gts, intrinsics = generate_scene(SceneSpec(seed=11, n_objects=5))
        dets = perturb(gts, NoiseSpec(), seed=3, intrinsics=intrinsics)
        assert len(dets) == len(gts)
        for det, gt in zip(dets, gts):
            assert det.confidence == 1.0
            assert np.array_equal(det.box3d.center, gt.box3d.center)
            assert det.box3d.dims == gt.box3d.dims
            assert (det.box2d.x1, det.box2d.y1) == (gt.box2d.x1, gt.box2d.y1)

    def test_fn_rate_one_empty(self):
        gts, intrinsics = generate_scene(SceneSpec(seed=12, n_objects=5))
        assert perturb(gts, NoiseSpec(fn_rate=1.0), 0, intrinsics) == []

    def test_half_normal_mean_depth_error(self):
        # |N(0, sigma)| has mean sigma * sqrt(2/pi)
        gts, intrinsics = generate_scene(SceneSpec(seed=13, n_objects=10, depth_range=(30.0, 60.0)))
        sigma = 2.0
        errors = []
        draws = 0
        seed = 0
        while draws < 10_000:
            dets = perturb(gts, NoiseSpec(sigma_z=sigma), seed, intrinsics)
            for det, gt in zip(dets, gts):
                errors.append(abs(det.box3d.z - gt.box3d.z))
            draws += len(dets)
            seed += 1
        mean = np.mean(errors)
        expected = sigma * math.sqrt(2 / math.pi)
        assert abs(mean - expected) / expected < 0.05

    def test_fp_substream_keeps_real_detections_stable(self):
        gts, intrinsics = generate_scene(SceneSpec(seed=14, n_objects=6))
        with_fp = perturb(gts, NoiseSpec(sigma_z=0.5, fp_rate=0.8), 5, intrinsics)
        without_fp = perturb(gts, NoiseSpec(sigma_z=0.5, fp_rate=0.0), 5, intrinsics)
        assert len(with_fp) >= len(without_fp)
        for det, ref in zip(with_fp[: len(without_fp)], without_fp):
            assert np.array_equal(det.box3d.center, ref.box3d.center)

    def test_confidence_decreases_with_error(self):
        gts, intrinsics = generate_scene(SceneSpec(seed=15, n_objects=8, depth_range=(30.0, 60.0)))
        small = perturb(gts, NoiseSpec(sigma_z=0.1), 1, intrinsics)
        large = perturb(gts, NoiseSpec(sigma_z=3.0), 1, intrinsics)
        assert np.mean([d.confidence for d in small]) > np.mean([d.confidence for d in large])

    def test_invalid_rates_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(fp_rate=1.5)
        with pytest.raises(ValueError):
            NoiseSpec(sigma_z=-1.0)
