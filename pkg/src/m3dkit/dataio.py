"""File formats: KITTI labels/calibration, the binary tensor container, run config.

KITTI label lines carry 15 (ground truth) or 16 (prediction, trailing score)
whitespace-separated fields:

    type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]

The stored location is the bottom-face center; Box3D keeps the true centroid,
so y is shifted by h/2 on parse and back on write. Numeric output uses %.2f
(devkit convention); parse->write is a fixed point after one normalization.

The tensor container is little-endian: magic b"M3DT", uint32 version, uint32
header length, a UTF-8 JSON header listing tensor names and shapes in payload
order, then the concatenated float32 payloads. Round-trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .detections import Detection, GroundTruthObject
from .distill import FEATURE_DIM
from .geometry import Box2D, Box3D, CameraIntrinsics, rotation_to_yaw, wrap_angle, yaw_to_rotation
from .losses import LossWeights
from .matching import MatchConfig

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "M3DKIT_CONFIG"
CONTAINER_MAGIC = b"M3DT"
CONTAINER_VERSION = 1


class KittiParseError(ValueError):
    """Parse failure with file/line location."""

    def __init__(self, message: str, path: str | None = None, lineno: int | None = None):
        location = ""
        if path is not None:
            location += str(path)
        if lineno is not None:
            location += f":{lineno}"
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.lineno = lineno


class ContainerFormatError(ValueError):
    """Malformed binary tensor container."""


class ConfigError(ValueError):
    """Malformed run configuration."""


@dataclass(frozen=True, eq=False)
class KittiObject:
    """One parsed KITTI label line (ground truth or scored prediction)."""

    cls: str
    truncation: float
    occlusion: int
    alpha: float
    box2d: Box2D
    box3d: Box3D
    score: float | None = None

    def to_ground_truth(self, class_to_id: dict[str, int]) -> GroundTruthObject:
        return GroundTruthObject(
            class_id=class_to_id[self.cls],
            box2d=self.box2d,
            box3d=self.box3d,
            truncation=self.truncation,
            occlusion=self.occlusion,
        )

    def to_detection(self, class_to_id: dict[str, int]) -> Detection:
        if self.score is None:
            raise ValueError("prediction line has no score field")
        return Detection(
            class_id=class_to_id[self.cls],
            confidence=min(max(self.score, 0.0), 1.0),
            box2d=self.box2d,
            box3d=self.box3d,
        )


def parse_kitti_label_line(line: str, lineno: int | None = None, path: str | None = None) -> KittiObject:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise KittiParseError(f"expected 15 or 16 fields, got {len(fields)}", path, lineno)
    try:
        values = [float(tok) for tok in fields[1:]]
    except ValueError as exc:
        raise KittiParseError(f"non-numeric field: {exc}", path, lineno) from None
    if not all(math.isfinite(v) for v in values):
        raise KittiParseError("non-finite numeric field", path, lineno)
    trunc, occ_raw, alpha = values[0], values[1], values[2]
    x1, y1, x2, y2 = values[3:7]
    h, w, l = values[7:10]
    x, y_bottom, z = values[10:13]
    ry = values[13]
    score = values[14] if len(values) == 15 else None
    if occ_raw != int(occ_raw):
        raise KittiParseError(f"occlusion must be an integer, got {occ_raw}", path, lineno)
    if h <= 0 or w <= 0 or l <= 0:
        raise KittiParseError(f"dimensions must be positive, got h={h} w={w} l={l}", path, lineno)
    if x2 < x1 or y2 < y1:
        raise KittiParseError("2D box corners out of order", path, lineno)
    try:
        box2d = Box2D(x1, y1, x2, y2)
        box3d = Box3D(np.array([x, y_bottom - h / 2.0, z]), (h, w, l), yaw_to_rotation(ry))
    except ValueError as exc:
        raise KittiParseError(str(exc), path, lineno) from None
    return KittiObject(
        cls=fields[0],
        truncation=trunc,
        occlusion=int(occ_raw),
        alpha=alpha,
        box2d=box2d,
        box3d=box3d,
        score=score,
    )


def format_kitti_label(obj: KittiObject) -> str:
    """Devkit-style %.2f line; location converted back to the bottom-face center."""
    h, w, l = obj.box3d.dims
    x, y_center, z = obj.box3d.center
    ry = rotation_to_yaw(obj.box3d.rotation)
    parts = [
        obj.cls,
        f"{obj.truncation:.2f}",
        f"{obj.occlusion:d}",
        f"{obj.alpha:.2f}",
        f"{obj.box2d.x1:.2f}",
        f"{obj.box2d.y1:.2f}",
        f"{obj.box2d.x2:.2f}",
        f"{obj.box2d.y2:.2f}",
        f"{h:.2f}",
        f"{w:.2f}",
        f"{l:.2f}",
        f"{x:.2f}",
        f"{y_center + h / 2.0:.2f}",
        f"{z:.2f}",
        f"{ry:.2f}",
    ]
    if obj.score is not None:
        parts.append(f"{obj.score:.2f}")
    return " ".join(parts)


def parse_kitti_label_file(path: str) -> list[KittiObject]:
    objects = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                objects.append(parse_kitti_label_line(line, lineno, path))
    return objects


def write_kitti_label_file(path: str, objects: list[KittiObject]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(format_kitti_label(obj) + "\n")


def parse_kitti_calib(path: str) -> CameraIntrinsics:
    """Extract pinhole intrinsics from the P2 projection row.

    fx = P2[0,0], fy = P2[1,1], cx = P2[0,2], cy = P2[1,2]. A nonzero
    translation column (stereo baseline) is logged, not applied. Rows other
    than P2 are ignored.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.startswith("P2:"):
                continue
            tokens = line.split()[1:]
            if len(tokens) != 12:
                raise KittiParseError(f"P2 row must have 12 values, got {len(tokens)}", path, lineno)
            try:
                vals = [float(t) for t in tokens]
            except ValueError as exc:
                raise KittiParseError(f"non-numeric P2 entry: {exc}", path, lineno) from None
            if abs(vals[3]) > 1e-9 or abs(vals[7]) > 1e-9:
                logger.warning("%s: P2 carries a nonzero baseline offset (%.6g, %.6g); ignored",
                               path, vals[3], vals[7])
            return CameraIntrinsics(fx=vals[0], fy=vals[5], cx=vals[2], cy=vals[6])
    raise KittiParseError("missing P2 row", path)


def alpha_from_box(box3d: Box3D) -> float:
    """Observation angle: yaw minus the azimuth of the viewing ray."""
    x, _, z = box3d.center
    return wrap_angle(rotation_to_yaw(box3d.rotation) - math.atan2(x, z))


def ground_truth_to_kitti(gt: GroundTruthObject, class_names: list[str]) -> KittiObject:
    return KittiObject(
        cls=class_names[gt.class_id],
        truncation=gt.truncation,
        occlusion=gt.occlusion,
        alpha=alpha_from_box(gt.box3d),
        box2d=gt.box2d,
        box3d=gt.box3d,
    )


def detection_to_kitti(det: Detection, class_names: list[str]) -> KittiObject:
    return KittiObject(
        cls=class_names[det.class_id],
        truncation=0.0,
        occlusion=0,
        alpha=alpha_from_box(det.box3d),
        box2d=det.box2d,
        box3d=det.box3d,
        score=det.confidence,
    )


# --- binary tensor container ---------------------------------------------


def save_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors; payload order follows dict order."""
    entries = []
    payloads = []
    for name, array in tensors.items():
        arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
        entries.append({"name": name, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = json.dumps({"tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<II", CONTAINER_VERSION, len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def load_tensors(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != CONTAINER_MAGIC:
        raise ContainerFormatError(f"{path}: not a tensor container (bad magic)")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != CONTAINER_VERSION:
        raise ContainerFormatError(f"{path}: unsupported container version {version}")
    if len(data) < 12 + header_len:
        raise ContainerFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
        entries = header["tensors"]
    except (ValueError, KeyError) as exc:
        raise ContainerFormatError(f"{path}: invalid header: {exc}") from None
    tensors: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(data):
            raise ContainerFormatError(f"{path}: truncated payload for tensor {entry['name']!r}")
        flat = np.frombuffer(data[offset : offset + nbytes], dtype="<f4")
        tensors[entry["name"]] = flat.reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise ContainerFormatError(f"{path}: {len(data) - offset} trailing bytes after payloads")
    return tensors


# --- head weight containers --------------------------------------------------

_HEAD_PARAM_KEYS = ("w3", "b3", "w1a", "b1a", "w1b", "b1b")


def save_head_set(path: str, head_set) -> None:
    """Serialize a HeadSet: tensors named '<head>/<param>' for cls + regression."""
    tensors = {}
    named = {"cls": head_set.cls, **head_set.regression}
    for head_name, params in named.items():
        for key in _HEAD_PARAM_KEYS:
            tensors[f"{head_name}/{key}"] = getattr(params, key)
    save_tensors(path, tensors)


def load_head_set(path: str):
    from .heads import HeadParams, HeadSet  # local import keeps heads numpy-only

    tensors = load_tensors(path)
    heads: dict[str, dict[str, np.ndarray]] = {}
    for name, value in tensors.items():
        try:
            head_name, key = name.rsplit("/", 1)
        except ValueError:
            raise ContainerFormatError(f"{path}: unexpected tensor name {name!r}") from None
        heads.setdefault(head_name, {})[key] = value
    try:
        params = {h: HeadParams(**kv) for h, kv in heads.items()}
        cls = params.pop("cls")
        return HeadSet(cls=cls, regression=params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerFormatError(f"{path}: not a valid head-set container: {exc}") from None


# --- teacher feature dumps -------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureDumpEntry:
    """Depth features and depth for one (image, instance)."""

    image_index: int
    instance_index: int
    feat: np.ndarray
    z: float


def write_teacher_features(path: str, entries: list[FeatureDumpEntry]) -> None:
    tensors: dict[str, np.ndarray] = {}
    for e in entries:
        feat = np.asarray(e.feat, dtype=np.float32).reshape(-1)
        if feat.shape != (FEATURE_DIM,):
            raise ValueError(f"feature vector must have length {FEATURE_DIM}, got {feat.shape}")
        key = f"n{e.image_index:06d}/i{e.instance_index:04d}"
        tensors[f"{key}/feat"] = feat
        tensors[f"{key}/z"] = np.array([e.z], dtype=np.float32)
    save_tensors(path, tensors)


def read_teacher_features(path: str) -> list[FeatureDumpEntry]:
    tensors = load_tensors(path)
    entries = []
    for name, feat in tensors.items():
        if not name.endswith("/feat"):
            continue
        key = name[: -len("/feat")]
        try:
            image_index = int(key.split("/")[0][1:])
            instance_index = int(key.split("/")[1][1:])
        except (IndexError, ValueError):
            raise ContainerFormatError(f"{path}: malformed feature key {name!r}") from None
        if feat.shape != (FEATURE_DIM,):
            raise ContainerFormatError(
                f"{path}: feature {name!r} must be a {FEATURE_DIM}-vector, got shape {feat.shape}"
            )
        z_name = f"{key}/z"
        if z_name not in tensors:
            raise ContainerFormatError(f"{path}: missing depth tensor {z_name!r}")
        entries.append(
            FeatureDumpEntry(image_index, instance_index, feat.astype(np.float64), float(tensors[z_name][0]))
        )
    entries.sort(key=lambda e: (e.image_index, e.instance_index))
    return entries


# --- run configuration ------------------------------------------------------

CONFIG_VERSION = 1

DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")
# Commonly used KITTI train-set mean dimensions (h, w, l); configurable.
DEFAULT_MEAN_DIMS = {
    "Car": (1.53, 1.63, 3.88),
    "Pedestrian": (1.76, 0.66, 0.84),
    "Cyclist": (1.74, 0.60, 1.76),
}
DEFAULT_IOU_THRESHOLDS = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}


@dataclass
class RunConfig:
    """Toolkit-wide knobs with the published defaults."""

    match_alpha: float = 0.5
    match_beta: float = 1.0
    match_gamma: float = 1.0
    match_topk: int = 10
    distill_epsilon: float = 0.1
    distill_eta_cap: float | None = None
    loss_d2d: float = 0.02
    loss_o2d: float = 0.02
    loss_d3d: float = 1.0
    loss_o3d: float = 1.0
    loss_rot: float = 1.0
    loss_z: float = 1.0
    loss_distill: float = 0.1
    cgi_topk: int = 50
    orientation_mode: str = "multibin"
    classes: tuple[str, ...] = DEFAULT_CLASSES
    class_mean_dims: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_MEAN_DIMS)
    )
    iou_thresholds: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_IOU_THRESHOLDS))
    image_size: tuple[int, int] = (1280, 384)

    @property
    def match_config(self) -> MatchConfig:
        return MatchConfig(self.match_alpha, self.match_beta, self.match_gamma, self.match_topk)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            d2d=self.loss_d2d,
            o2d=self.loss_o2d,
            d3d=self.loss_d3d,
            o3d=self.loss_o3d,
            rot=self.loss_rot,
            z=self.loss_z,
            distill=self.loss_distill,
        )

    @property
    def class_to_id(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.classes)}

    def mean_dims_array(self) -> np.ndarray:
        return np.array([self.class_mean_dims[name] for name in self.classes])

    def to_json_dict(self) -> dict:
        out = {"version": CONFIG_VERSION}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
_TUPLE_FIELDS = {"classes", "image_size"}


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    version = data.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        if key == "class_mean_dims" and isinstance(value, dict):
            value = {k: tuple(v) for k, v in value.items()}
        kwargs[key] = value
    return RunConfig(**kwargs)


def load_config(path: str | None = None) -> RunConfig:
    """Load config from path, the M3DKIT_CONFIG env var, or defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(data)


def save_config(path: str, config: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply `key=value` CLI overrides; values parse as JSON, else strings."""
    data = config.to_json_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        try:
            data[key] = json.loads(raw)
        except json.JSONDecodeError:
            data[key] = raw
    return config_from_dict(data)
