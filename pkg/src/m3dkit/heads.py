"""Deterministic forward-only engine for the 3x3 -> 1x1 -> 1x1 prediction heads.

Every head output at a location is a pure function of the 3x3 input patch
around it (effective receptive field 3x3, zero padding at borders). Dense
maps are produced by evaluating the identical per-patch routine at every
location, so sparse per-patch evaluation is bitwise equal to the dense map
by construction. Weights and arithmetic are float32, matching the on-disk
container payload.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIDDEN_DIM = 64

# Output channels per prediction head. multibin = 12 bin logits + 12 residuals.
HEAD_CHANNELS = {
    "offset_2d": 2,
    "size_2d": 2,
    "offset_3d": 2,
    "size_3d": 3,
    "depth": 1,
    "uncertainty": 1,
    "multibin": 24,
    "so3": 6,
}

STRIDES = (8, 16)


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x), evaluated in the input dtype."""
    return x * (1.0 / (1.0 + np.exp(-x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _f32(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float32))


@dataclass(eq=False)
class HeadParams:
    """One head: 3x3 conv (C -> 64, pad 1), then 1x1 (64 -> 64), then 1x1 (64 -> out)."""

    w3: np.ndarray
    b3: np.ndarray
    w1a: np.ndarray
    b1a: np.ndarray
    w1b: np.ndarray
    b1b: np.ndarray
    _w3_flat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.w3 = _f32(self.w3)
        self.b3 = _f32(self.b3)
        self.w1a = _f32(self.w1a)
        self.b1a = _f32(self.b1a)
        self.w1b = _f32(self.w1b)
        self.b1b = _f32(self.b1b)
        if self.w3.ndim != 4 or self.w3.shape[0] != HIDDEN_DIM or self.w3.shape[2:] != (3, 3):
            raise ValueError(f"w3 must have shape (64, C, 3, 3), got {self.w3.shape}")
        if self.b3.shape != (HIDDEN_DIM,):
            raise ValueError(f"b3 must have shape (64,), got {self.b3.shape}")
        if self.w1a.shape != (HIDDEN_DIM, HIDDEN_DIM) or self.b1a.shape != (HIDDEN_DIM,):
            raise ValueError("w1a/b1a must map 64 -> 64 channels")
        if self.w1b.ndim != 2 or self.w1b.shape[1] != HIDDEN_DIM:
            raise ValueError(f"w1b must have shape (out, 64), got {self.w1b.shape}")
        if self.b1b.shape != (self.w1b.shape[0],):
            raise ValueError("b1b must match the w1b output channels")
        self._w3_flat = self.w3.reshape(HIDDEN_DIM, -1)

    @property
    def in_channels(self) -> int:
        return self.w3.shape[1]

    @property
    def out_channels(self) -> int:
        return self.w1b.shape[0]


def random_head_params(rng: np.random.Generator, in_channels: int, out_channels: int,
                       scale: float = 0.2, final_bias: float = 0.0) -> HeadParams:
    """Small random weights for tests and benches; final_bias offsets the output."""
    return HeadParams(
        w3=rng.normal(0.0, scale, (HIDDEN_DIM, in_channels, 3, 3)),
        b3=rng.normal(0.0, scale, HIDDEN_DIM),
        w1a=rng.normal(0.0, scale, (HIDDEN_DIM, HIDDEN_DIM)),
        b1a=rng.normal(0.0, scale, HIDDEN_DIM),
        w1b=rng.normal(0.0, scale, (out_channels, HIDDEN_DIM)),
        b1b=rng.normal(0.0, scale, out_channels) + final_bias,
    )


@dataclass(eq=False)
class HeadSet:
    """Classification head plus the eight regression heads over shared input width."""

    cls: HeadParams
    regression: dict[str, HeadParams]

    def __post_init__(self):
        if set(self.regression) != set(HEAD_CHANNELS):
            raise ValueError(
                f"regression heads must be exactly {sorted(HEAD_CHANNELS)}, got {sorted(self.regression)}"
            )
        for name, params in self.regression.items():
            if params.out_channels != HEAD_CHANNELS[name]:
                raise ValueError(
                    f"head {name!r} must emit {HEAD_CHANNELS[name]} channels, got {params.out_channels}"
                )
            if params.in_channels != self.cls.in_channels:
                raise ValueError("all heads must share the neck channel width")

    @property
    def in_channels(self) -> int:
        return self.cls.in_channels

    @property
    def n_classes(self) -> int:
        return self.cls.out_channels


def random_head_set(rng: np.random.Generator, in_channels: int, n_classes: int,
                    scale: float = 0.2) -> HeadSet:
    regression = {}
    for name, out in HEAD_CHANNELS.items():
        # Keep decoded depths positive and uncertainties tame under random weights.
        bias = 15.0 if name == "depth" else 0.0
        regression[name] = random_head_params(rng, in_channels, out, scale, final_bias=bias)
    return HeadSet(cls=random_head_params(rng, in_channels, n_classes, scale), regression=regression)


@dataclass(eq=False)
class FeatureMapSet:
    """Per-stride neck feature maps, each (C, H, W) float32."""

    maps: dict[int, np.ndarray]

    def __post_init__(self):
        if set(self.maps) != set(STRIDES):
            raise ValueError(f"feature maps must cover strides {STRIDES}, got {sorted(self.maps)}")
        self.maps = {s: _f32(m) for s, m in self.maps.items()}
        widths = set()
        for s, m in self.maps.items():
            if m.ndim != 3:
                raise ValueError(f"feature map at stride {s} must be (C, H, W), got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"feature map at stride {s} contains non-finite values")
            widths.add(m.shape[0])
        if len(widths) != 1:
            raise ValueError(f"all levels must share the channel count, got {widths}")

    @property
    def channels(self) -> int:
        return next(iter(self.maps.values())).shape[0]

    def shape(self, stride: int) -> tuple[int, int]:
        _, h, w = self.maps[stride].shape
        return h, w

    @property
    def total_locations(self) -> int:
        return sum(h * w for h, w in (self.shape(s) for s in STRIDES))


def eval_head_at_patch(params: HeadParams, patch: np.ndarray) -> np.ndarray:
    """Head output for one 3x3 patch; the single code path for dense and gated."""
    v = params._w3_flat @ patch.ravel() + params.b3
    v = silu(v)
    v = silu(params.w1a @ v + params.b1a)
    return params.w1b @ v + params.b1b


def eval_head_at_patch_tapped(params: HeadParams, patch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Like eval_head_at_patch but also returns the 64-vector feeding the final 1x1."""
    v = params._w3_flat @ patch.ravel() + params.b3
    v = silu(v)
    hidden = silu(params.w1a @ v + params.b1a)
    return params.w1b @ hidden + params.b1b, hidden


def patch_at(padded: np.ndarray, row: int, col: int) -> np.ndarray:
    """Contiguous (C, 3, 3) window of a map padded by 1 on each spatial side."""
    return np.ascontiguousarray(padded[:, row : row + 3, col : col + 3])


def pad_map(feature_map: np.ndarray) -> np.ndarray:
    return np.pad(feature_map, ((0, 0), (1, 1), (1, 1)))


def head_forward(feature_map: np.ndarray, params: HeadParams) -> np.ndarray:
    """Dense head output (out, H, W) by per-location patch evaluation."""
    feature_map = _f32(feature_map)
    _, h, w = feature_map.shape
    padded = pad_map(feature_map)
    out = np.empty((params.out_channels, h, w), dtype=np.float32)
    for r in range(h):
        for c in range(w):
            out[:, r, c] = eval_head_at_patch(params, patch_at(padded, r, c))
    return out


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None, pad: int = 0) -> np.ndarray:
    """Stride-1 cross-correlation with zero padding.

    x: (C_in, H, W); kernel: (C_out, C_in, kh, kw); bias: (C_out,) or None.
    Each output element is one flattened-kernel dot product, so two runs on
    identical inputs are bit-identical.
    """
    x = _f32(x)
    kernel = _f32(kernel)
    if kernel.ndim != 4 or x.ndim != 3 or kernel.shape[1] != x.shape[0]:
        raise ValueError(f"channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    c_out, _, kh, kw = kernel.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = x.shape[1] - kh + 1
    w_out = x.shape[2] - kw + 1
    if h_out <= 0 or w_out <= 0:
        raise ValueError("kernel larger than padded input")
    k_flat = kernel.reshape(c_out, -1)
    b = _f32(bias) if bias is not None else np.zeros(c_out, dtype=np.float32)
    if b.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {b.shape}")
    out = np.empty((c_out, h_out, w_out), dtype=np.float32)
    for r in range(h_out):
        for c in range(w_out):
            window = np.ascontiguousarray(x[:, r : r + kh, c : c + kw])
            out[:, r, c] = k_flat @ window.ravel() + b
    return out


def per_location_macs(params: HeadParams) -> int:
    """Multiply-accumulates to evaluate one head at one location."""
    c = params.in_channels
    return 9 * c * HIDDEN_DIM + HIDDEN_DIM * HIDDEN_DIM + HIDDEN_DIM * params.out_channels


def flop_count_dense(params: HeadParams, height: int, width: int) -> int:
    """Dense MAC count: every location pays the full per-location cost."""
    return height * width * per_location_macs(params)


def flop_count_gated(params: HeadParams, k: int) -> int:
    """Gated MAC count: only k selected patches are evaluated."""
    return k * per_location_macs(params)
