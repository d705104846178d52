"""3D/2D box types, orientation codecs, pinhole projection, and IoU primitives.

Camera frame follows the KITTI convention: x right, y down, z forward
(optical axis). Yaw is a rotation about the camera y axis (vertical):

    R_y(t) = [[ cos t, 0, sin t],
              [     0, 1,     0],
              [-sin t, 0, cos t]]

Box local axes before rotation: length -> x, height -> y, width -> z.
Corner ordering for an (h, w, l) box is the 8 sign combinations of
(+-l/2, +-h/2, +-w/2) with the x sign varying slowest and the z sign
fastest (corner 0 = (+,+,+), corner 7 = (-,-,-)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-9
# Cross-product sign tolerance for the convex polygon clipper.
CLIP_EPS = 1e-12

NUM_ORIENTATION_BINS = 12
BIN_WIDTH = math.pi / 6.0


class DegenerateInputError(ValueError):
    """Raised when a geometric construction has no well-defined answer."""


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image-plane box, corners (x1, y1) top-left / (x2, y2) bottom-right."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"Box2D requires finite corners, got {vals}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"Box2D corners out of order: {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


@dataclass(frozen=True, eq=False)
class Box3D:
    """Oriented 3D box: centroid (m, camera frame), dims (h, w, l) in m, 3x3 rotation."""

    center: np.ndarray
    dims: tuple[float, float, float]
    rotation: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        object.__setattr__(self, "rotation", rotation)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ValueError(f"Box3D dims (h, w, l) must be positive, got {self.dims}")
        if not np.all(np.isfinite(center)) or not np.all(np.isfinite(rotation)):
            raise ValueError("Box3D requires finite center and rotation")

    @property
    def h(self) -> float:
        return self.dims[0]

    @property
    def w(self) -> float:
        return self.dims[1]

    @property
    def l(self) -> float:  # noqa: E743 - conventional dimension name
        return self.dims[2]

    @property
    def z(self) -> float:
        return float(self.center[2])

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    @property
    def yaw(self) -> float:
        return rotation_to_yaw(self.rotation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


@dataclass(frozen=True)
class OrientationMultiBin:
    """Angle as a discrete bin plus a continuous residual (radians).

    multibin_encode guarantees |residual| <= pi/12; decoded predictions may
    carry larger residuals, so the type itself does not restrict the range.
    """

    bin_index: int
    residual: float

    def __post_init__(self):
        if not 0 <= self.bin_index < NUM_ORIENTATION_BINS:
            raise ValueError(f"bin_index must be in 0..{NUM_ORIENTATION_BINS - 1}, got {self.bin_index}")


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return float((theta + math.pi) % (2.0 * math.pi) - math.pi)


def check_rotation(r: np.ndarray, tol: float = ROTATION_TOL) -> np.ndarray:
    """Validate that r is a proper rotation (orthonormal, det 1) within tol."""
    r = np.asarray(r, dtype=np.float64).reshape(3, 3)
    err = np.abs(r.T @ r - np.eye(3)).max()
    det = np.linalg.det(r)
    if err > tol or abs(det - 1.0) > tol:
        raise ValueError(f"not a rotation matrix: |R^T R - I|={err:.3e}, det={det:.12f}")
    return r


def yaw_to_rotation(theta: float) -> np.ndarray:
    """Rotation about the camera vertical (y) axis by theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_to_yaw(r: np.ndarray) -> float:
    """Extract yaw on [-pi, pi]; inverse of yaw_to_rotation for yaw-only r."""
    return math.atan2(r[0, 2], r[0, 0])


def is_yaw_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    """True when r is (numerically) a pure rotation about the vertical axis."""
    return bool(np.abs(r - yaw_to_rotation(rotation_to_yaw(r))).max() <= tol)


def gram_schmidt_6d(v: np.ndarray) -> np.ndarray:
    """Map a 6-vector to a rotation via Gram-Schmidt on its two 3-subvectors.

    Columns of the result are (normalized a, orthogonalized b, their cross
    product). Scale-invariant in each subvector. Raises DegenerateInputError
    when a subvector is zero or the pair is parallel (residual norm <= 1e-12).
    """
    v = np.asarray(v, dtype=np.float64).reshape(6)
    a, b = v[:3], v[3:]
    na = np.linalg.norm(a)
    if na <= 1e-12:
        raise DegenerateInputError("first 3-subvector has (near-)zero norm")
    r1 = a / na
    u2 = b - (r1 @ b) * r1
    n2 = np.linalg.norm(u2)
    if n2 <= 1e-12:
        raise DegenerateInputError("second 3-subvector is (near-)parallel to the first")
    r2 = u2 / n2
    r3 = np.cross(r1, r2)
    return np.column_stack([r1, r2, r3])


def ray_rotation(center: np.ndarray) -> np.ndarray:
    """Rotation mapping the optical axis (0,0,1) onto the ray through center."""
    center = np.asarray(center, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(center)
    if norm <= 0.0:
        raise DegenerateInputError("viewing ray undefined for zero-norm center")
    d = center / norm
    axis = np.cross(np.array([0.0, 0.0, 1.0]), d)
    s = np.linalg.norm(axis)
    c = d[2]
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # Antipodal ray: 180 deg about x (any axis perpendicular to z works).
        return np.diag([1.0, -1.0, -1.0])
    k = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + k + k @ k * ((1.0 - c) / (s * s))


def allocentric_to_egocentric(r_alloc: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Compose the object-relative rotation with the viewing-ray rotation."""
    return ray_rotation(center) @ np.asarray(r_alloc, dtype=np.float64)


def egocentric_to_allocentric(r_ego: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Inverse of allocentric_to_egocentric."""
    return ray_rotation(center).T @ np.asarray(r_ego, dtype=np.float64)


def multibin_bin_center(bin_index: int) -> float:
    return -math.pi + (bin_index + 0.5) * BIN_WIDTH


def multibin_encode(theta: float) -> OrientationMultiBin:
    """Encode an angle into (bin, residual); bin centers at -pi + (i+0.5)*pi/6."""
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    t = wrap_angle(theta)
    idx = int(math.floor((t + math.pi) / BIN_WIDTH))
    idx = min(idx, NUM_ORIENTATION_BINS - 1)  # guard the t ~ pi float edge
    return OrientationMultiBin(idx, t - multibin_bin_center(idx))


def multibin_decode(encoded: OrientationMultiBin) -> float:
    """Recover the angle on [-pi, pi) from (bin, residual)."""
    return wrap_angle(multibin_bin_center(encoded.bin_index) + encoded.residual)


def corners_3d(box: Box3D) -> np.ndarray:
    """8 world-frame corners, shape (8, 3), in the documented sign order."""
    h, w, l = box.dims
    signs = np.array(
        [
            [+1, +1, +1],
            [+1, +1, -1],
            [+1, -1, +1],
            [+1, -1, -1],
            [-1, +1, +1],
            [-1, +1, -1],
            [-1, -1, +1],
            [-1, -1, -1],
        ],
        dtype=np.float64,
    )
    local = signs * np.array([l / 2.0, h / 2.0, w / 2.0])
    return local @ box.rotation.T + box.center


# Bottom face (+h/2, y points down) in counter-clockwise x-z order for yaw-only boxes.
_BEV_CORNER_ORDER = (0, 4, 5, 1)


def bev_polygon(box: Box3D) -> np.ndarray:
    """4-point bottom-face footprint in the x-z plane, counter-clockwise."""
    poly = corners_3d(box)[list(_BEV_CORNER_ORDER)][:, [0, 2]]
    if _signed_area(poly) < 0.0:  # general rotations may flip the winding
        poly = poly[::-1]
    return poly


def project(point: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of a camera-frame point (z > 0) to pixels."""
    point = np.asarray(point, dtype=np.float64).reshape(3)
    if point[2] <= 0.0:
        raise ValueError(f"cannot project point with non-positive depth z={point[2]}")
    return np.array([k.fx * point[0] / point[2] + k.cx, k.fy * point[1] / point[2] + k.cy])


def backproject(pixel: np.ndarray, depth: float, k: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel at the given depth (m, > 0) back to the camera frame."""
    if depth <= 0.0:
        raise ValueError(f"backprojection requires positive depth, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth])


def iou_2d(a: Box2D, b: Box2D) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 for degenerate areas."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(poly: np.ndarray) -> float:
    """Area of a simple polygon given as (n, 2) vertices."""
    if len(poly) < 3:
        return 0.0
    return abs(_signed_area(np.asarray(poly, dtype=np.float64)))


def clip_convex_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex subject by a convex CCW clip polygon."""
    output = [np.asarray(p, dtype=np.float64) for p in subject]
    clip = np.asarray(clip, dtype=np.float64)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a, b = clip[i], clip[(i + 1) % n]
        edge = b - a
        inputs, output = output, []
        prev = inputs[-1]
        # CCW clip polygon: inside = on or left of the directed edge.
        prev_in = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0]) >= -CLIP_EPS
        for cur in inputs:
            cur_in = edge[0] * (cur[1] - a[1]) - edge[1] * (cur[0] - a[0]) >= -CLIP_EPS
            if cur_in != prev_in:
                output.append(_line_intersection(prev, cur, a, b))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _line_intersection(p1, p2, a, b):
    d1 = p2 - p1
    d2 = b - a
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < CLIP_EPS:
        return p2.copy()
    t = ((a[0] - p1[0]) * d2[1] - (a[1] - p1[1]) * d2[0]) / denom
    return p1 + t * d1


def rotated_iou_bev(a: Box3D, b: Box3D) -> float:
    """Birds-eye-view IoU of the two boxes' footprints via convex clipping."""
    pa, pb = bev_polygon(a), bev_polygon(b)
    inter = polygon_area(clip_convex_polygon(pa, pb))
    union = polygon_area(pa) + polygon_area(pb) - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU for yaw-only boxes (KITTI evaluation path).

    Rejects general rotations: the evaluation protocol is defined on
    yaw-only boxes and the footprint-times-height decomposition is exact
    only there.
    """
    if not is_yaw_rotation(a.rotation, tol=1e-6) or not is_yaw_rotation(b.rotation, tol=1e-6):
        raise ValueError("iou_3d is defined for yaw-only rotations on the evaluation path")
    inter_area = polygon_area(clip_convex_polygon(bev_polygon(a), bev_polygon(b)))
    ya = (a.center[1] - a.h / 2.0, a.center[1] + a.h / 2.0)
    yb = (b.center[1] - b.h / 2.0, b.center[1] + b.h / 2.0)
    inter_h = min(ya[1], yb[1]) - max(ya[0], yb[0])
    if inter_h <= 0.0 or inter_area <= 0.0:
        return 0.0
    inter_vol = inter_area * inter_h
    union = a.volume + b.volume - inter_vol
    if union <= 0.0:
        return 0.0
    return min(max(inter_vol / union, 0.0), 1.0)
