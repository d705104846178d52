"""Forward engine: convolution correctness, receptive field, FLOP formulas."""

import numpy as np
import pytest

from m3dkit.heads import (
    HEAD_CHANNELS,
    HIDDEN_DIM,
    FeatureMapSet,
    HeadParams,
    HeadSet,
    conv2d,
    eval_head_at_patch,
    eval_head_at_patch_tapped,
    flop_count_dense,
    flop_count_gated,
    head_forward,
    pad_map,
    patch_at,
    per_location_macs,
    random_head_params,
    random_head_set,
)


class TestConv2d:
    def test_identity_1x1_kernel(self):
        x = np.random.default_rng(0).normal(0, 1, (3, 4, 5)).astype(np.float32)
        kernel = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            kernel[c, c, 0, 0] = 1.0
        out = conv2d(x, kernel)
        assert np.array_equal(out, x)

    def test_zero_input_broadcasts_bias(self):
        kernel = np.random.default_rng(1).normal(0, 1, (4, 2, 3, 3)).astype(np.float32)
        bias = np.array([1.0, -2.0, 0.5, 3.0], dtype=np.float32)
        out = conv2d(np.zeros((2, 5, 5), dtype=np.float32), kernel, bias, pad=1)
        for c in range(4):
            assert np.all(out[c] == bias[c])

    def test_averaging_kernel_on_ramp(self):
        # 4x4 ramp image, 3x3 averaging kernel, no padding -> 2x2 interior
        ramp = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        kernel = np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=np.float32)
        out = conv2d(ramp, kernel)
        # interior means: center values of each 3x3 window
        expected = np.array([[5.0, 6.0], [9.0, 10.0]], dtype=np.float32)
        assert np.allclose(out[0], expected, atol=1e-6)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))

    def test_matches_head_first_stage(self):
        rng = np.random.default_rng(2)
        params = random_head_params(rng, 4, 2)
        x = rng.normal(0, 1, (4, 6, 7)).astype(np.float32)
        out = conv2d(x, params.w3, params.b3, pad=1)
        assert out.shape == (HIDDEN_DIM, 6, 7)


class TestHeadForward:
    def test_zero_weights_bias_only(self):
        params = HeadParams(
            w3=np.zeros((64, 3, 3, 3)),
            b3=np.zeros(64),
            w1a=np.zeros((64, 64)),
            b1a=np.zeros(64),
            w1b=np.zeros((2, 64)),
            b1b=np.array([1.5, -0.5]),
        )
        out = head_forward(np.random.default_rng(3).normal(0, 1, (3, 4, 5)), params)
        assert np.all(out[0] == np.float32(1.5)) and np.all(out[1] == np.float32(-0.5))

    def test_translation_equivariance_interior(self):
        rng = np.random.default_rng(4)
        params = random_head_params(rng, 2, 3)
        x = rng.normal(0, 1, (2, 8, 9)).astype(np.float32)
        shifted = np.roll(x, (1, 1), axis=(1, 2))
        out = head_forward(x, params)
        out_shifted = head_forward(shifted, params)
        # compare interiors untouched by wrap-around or border padding
        assert np.array_equal(out[:, 1:-2, 1:-2], out_shifted[:, 2:-1, 2:-1])

    def test_receptive_field_is_exactly_3x3(self):
        rng = np.random.default_rng(5)
        params = random_head_params(rng, 2, 1)
        x = rng.normal(0, 1, (2, 7, 7)).astype(np.float32)
        base = head_forward(x, params)[:, 3, 3]
        poked = x.copy()
        poked[:, 0, 0] += 10.0  # outside the (3,3)-centered neighborhood
        assert np.array_equal(head_forward(poked, params)[:, 3, 3], base)
        poked2 = x.copy()
        poked2[:, 2, 3] += 1.0  # inside the neighborhood
        assert not np.array_equal(head_forward(poked2, params)[:, 3, 3], base)

    def test_determinism_two_runs(self):
        rng = np.random.default_rng(6)
        params = random_head_params(rng, 3, 4)
        x = rng.normal(0, 1, (3, 6, 6)).astype(np.float32)
        assert np.array_equal(head_forward(x, params), head_forward(x, params))

    def test_depth_identity_tap(self):
        rng = np.random.default_rng(7)
        params = random_head_params(rng, 3, 1)
        x = rng.normal(0, 1, (3, 5, 5)).astype(np.float32)
        padded = pad_map(np.ascontiguousarray(x))
        dense = head_forward(x, params)
        for r in range(5):
            for c in range(5):
                out, hidden = eval_head_at_patch_tapped(params, patch_at(padded, r, c))
                assert np.array_equal(out, dense[:, r, c])
                recomputed = params.w1b @ hidden + params.b1b
                assert np.array_equal(recomputed, out)


class TestFlopCounts:
    def test_gated_equals_dense_when_k_covers_map(self):
        params = random_head_params(np.random.default_rng(8), 16, 2)
        assert flop_count_gated(params, 8 * 8) == flop_count_dense(params, 8, 8)

    def test_hand_ratio(self):
        params = random_head_params(np.random.default_rng(9), 64, 1)
        dense = flop_count_dense(params, 8, 8)
        gated = flop_count_gated(params, 4)
        assert gated / dense == 4 / 64
        assert per_location_macs(params) == 9 * 64 * 64 + 64 * 64 + 64 * 1

    def test_doubling_k_doubles_gated(self):
        params = random_head_params(np.random.default_rng(10), 8, 3)
        assert flop_count_gated(params, 10) * 2 == flop_count_gated(params, 20)


class TestHeadSet:
    def test_channel_table_enforced(self):
        rng = np.random.default_rng(11)
        heads = {name: random_head_params(rng, 8, out) for name, out in HEAD_CHANNELS.items()}
        heads["depth"] = random_head_params(rng, 8, 2)  # wrong: table says 1
        with pytest.raises(ValueError):
            HeadSet(cls=random_head_params(rng, 8, 3), regression=heads)

    def test_missing_head_rejected(self):
        rng = np.random.default_rng(12)
        heads = {name: random_head_params(rng, 8, out) for name, out in HEAD_CHANNELS.items()}
        del heads["so3"]
        with pytest.raises(ValueError):
            HeadSet(cls=random_head_params(rng, 8, 3), regression=heads)

    def test_valid_set_reports_widths(self):
        hs = random_head_set(np.random.default_rng(13), 16, 3)
        assert hs.in_channels == 16 and hs.n_classes == 3

    def test_expected_channel_table(self):
        assert HEAD_CHANNELS == {
            "offset_2d": 2,
            "size_2d": 2,
            "offset_3d": 2,
            "size_3d": 3,
            "depth": 1,
            "uncertainty": 1,
            "multibin": 24,
            "so3": 6,
        }


class TestFeatureMapSet:
    def test_stride_keys_enforced(self):
        with pytest.raises(ValueError):
            FeatureMapSet(maps={8: np.zeros((4, 4, 4))})

    def test_nonfinite_rejected(self):
        bad = np.zeros((2, 3, 3))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureMapSet(maps={8: bad, 16: np.zeros((2, 2, 2))})

    def test_total_locations(self):
        fm = FeatureMapSet(maps={8: np.zeros((2, 4, 6)), 16: np.zeros((2, 2, 3))})
        assert fm.total_locations == 24 + 6
