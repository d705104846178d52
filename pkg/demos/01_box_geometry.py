"""Boxes, orientation codecs, and IoU primitives.

Walks through the camera-frame conventions: build a 3D box, project it,
encode its yaw with the multi-bin codec, convert between allocentric and
egocentric orientation, and compare overlap measures.
"""

import math

import numpy as np

from m3dkit import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    allocentric_to_egocentric,
    backproject,
    corners_3d,
    egocentric_to_allocentric,
    iou_2d,
    iou_3d,
    multibin_decode,
    multibin_encode,
    project,
    rotated_iou_bev,
    yaw_to_rotation,
)

k = CameraIntrinsics(fx=700.0, fy=700.0, cx=640.0, cy=192.0)
car = Box3D(center=np.array([1.5, 0.8, 18.0]), dims=(1.5, 1.6, 4.0), rotation=yaw_to_rotation(0.4))

print("A car 18 m ahead, 1.5 m to the right, yawed 0.4 rad:")
print("  corners (first 4 of 8):")
for corner in corners_3d(car)[:4]:
    print(f"    ({corner[0]:+.2f}, {corner[1]:+.2f}, {corner[2]:+.2f}) m")

pixels = np.array([project(c, k) for c in corners_3d(car)])
hull = Box2D(pixels[:, 0].min(), pixels[:, 1].min(), pixels[:, 0].max(), pixels[:, 1].max())
print(f"  projected 2D hull: ({hull.x1:.1f}, {hull.y1:.1f}) .. ({hull.x2:.1f}, {hull.y2:.1f}) px")
print(f"  backprojecting the projected center at z=18 recovers x,y:",
      np.round(backproject(project(car.center, k), 18.0, k), 6))

print("\nMulti-bin yaw codec (12 bins of pi/6, residual within +-pi/12):")
for theta in (0.0, 0.4, -math.pi, 3.0):
    enc = multibin_encode(theta)
    print(f"  yaw {theta:+.3f} -> bin {enc.bin_index:2d}, residual {enc.residual:+.4f}, "
          f"decodes to {multibin_decode(enc):+.3f}")

print("\nAllocentric <-> egocentric (object on the x=z diagonal):")
r_alloc = egocentric_to_allocentric(car.rotation, car.center)
print("  egocentric yaw:", round(math.atan2(car.rotation[0, 2], car.rotation[0, 0]), 4))
back = allocentric_to_egocentric(r_alloc, car.center)
print("  roundtrip max error:", np.abs(back - car.rotation).max())

print("\nOverlap measures against a depth-shifted copy:")
for dz in (0.0, 0.3, 1.0, 3.0):
    other = Box3D(car.center + [0, 0, dz], car.dims, car.rotation)
    pix = np.array([project(c, k) for c in corners_3d(other)])
    hull2 = Box2D(pix[:, 0].min(), pix[:, 1].min(), pix[:, 0].max(), pix[:, 1].max())
    print(f"  dz={dz:3.1f} m: IoU2D={iou_2d(hull, hull2):.3f}  "
          f"BEV={rotated_iou_bev(car, other):.3f}  3D={iou_3d(car, other):.3f}")
