"""Pinhole camera geometry and 3D bounding-box algebra.

Conventions (KITTI camera frame):
  - X right, Y down, Z forward, units meters.
  - Image plane: u right, v down, units pixels.
  - Yaw rotates about the vertical (Y) axis; yaw = 0 points the box length
    axis along +X.  Angles are kept in (-pi, pi].
  - Local corners are the 8 box vertices relative to the box center, indexed
    by the sign pattern of (l/2, h/2, w/2) in lexicographic order with minus
    before plus: corner k has signs (-,-,-) for k=0 counting in binary up to
    (+,+,+) for k=7 (bit 2 -> length/X, bit 1 -> height/Y, bit 0 -> width/Z),
    all before the yaw rotation is applied.
"""

import math
from dataclasses import dataclass

import numpy as np

TAU = 2.0 * math.pi


class BehindCameraError(ValueError):
    """A point or box corner lies at or behind the camera plane (Z <= 0)."""


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(a, TAU)
    if r <= -math.pi:
        r += TAU
    return r


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: focal lengths and principal point, in pixels."""

    fu: float
    fv: float
    cu: float
    cv: float

    def __post_init__(self):
        if not (self.fu > 0 and self.fv > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fu}, {self.fv})")


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image box: width/height plus center (u, v), in pixels."""

    w: float
    h: float
    u: float
    v: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box size must be non-negative, got ({self.w}, {self.h})")

    @classmethod
    def from_ltrb(cls, left: float, top: float, right: float, bottom: float) -> "Box2D":
        return cls(right - left, bottom - top, (left + right) / 2.0, (top + bottom) / 2.0)

    @property
    def left(self) -> float:
        return self.u - self.w / 2.0

    @property
    def right(self) -> float:
        return self.u + self.w / 2.0

    @property
    def top(self) -> float:
        return self.v - self.h / 2.0

    @property
    def bottom(self) -> float:
        return self.v + self.h / 2.0

    def as_ltrb(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)


# Sign patterns of the canonical corner order, one row per corner.
_CORNER_SIGNS = np.array(
    [[(-1.0 if k & 4 == 0 else 1.0), (-1.0 if k & 2 == 0 else 1.0), (-1.0 if k & 1 == 0 else 1.0)] for k in range(8)]
)


def corners_from_pose(size: tuple[float, float, float], yaw: float) -> np.ndarray:
    """Local corners (8, 3) of a box of (l, w, h) rotated by yaw about Y.

    The unrotated box spans [-l/2, l/2] x [-h/2, h/2] x [-w/2, w/2]; the
    returned offsets sum to zero by construction.
    """
    l, w, h = size
    if not (l > 0 and w > 0 and h > 0):
        raise ValueError(f"box dimensions must be positive, got {size}")
    half = _CORNER_SIGNS * np.array([l / 2.0, h / 2.0, w / 2.0])
    c, s = math.cos(yaw), math.sin(yaw)
    out = np.empty((8, 3))
    out[:, 0] = half[:, 0] * c + half[:, 2] * s
    out[:, 1] = half[:, 1]
    out[:, 2] = -half[:, 0] * s + half[:, 2] * c
    return out


def pose_from_corners(corners: np.ndarray) -> tuple[tuple[float, float, float], float]:
    """Recover ((l, w, h), yaw) from local corners in canonical order.

    Exact for rigid corners produced by corners_from_pose; for deformed
    corners it returns the average edge interpretation.
    """
    corners = np.asarray(corners, dtype=float)
    if corners.shape != (8, 3):
        raise ValueError(f"expected (8, 3) corners, got {corners.shape}")
    # average edge vectors along each local axis, using the index bit layout
    l_vec = (corners[4:] - corners[:4]).mean(axis=0)
    h_vec = (corners[[2, 3, 6, 7]] - corners[[0, 1, 4, 5]]).mean(axis=0)
    w_vec = (corners[1::2] - corners[::2]).mean(axis=0)
    l = float(np.linalg.norm(l_vec))
    w = float(np.linalg.norm(w_vec))
    h = float(np.linalg.norm(h_vec))
    yaw = math.atan2(-l_vec[2], l_vec[0])
    return (l, w, h), normalize_angle(yaw)


@dataclass(frozen=True)
class Box3D:
    """3D box: geometric center in the camera frame, (l, w, h) size, yaw.

    The yaw is normalized into (-pi, pi] on construction.
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0
    class_id: int = 0
    score: float = 1.0

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must have three components")
        if not all(math.isfinite(c) for c in center):
            raise ValueError(f"non-finite center {center}")
        if not all(s > 0 for s in size):
            raise ValueError(f"box dimensions must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def x(self) -> float:
        return self.center[0]

    @property
    def y(self) -> float:
        return self.center[1]

    @property
    def z(self) -> float:
        return self.center[2]

    @property
    def l(self) -> float:
        return self.size[0]

    @property
    def w(self) -> float:
        return self.size[1]

    @property
    def h(self) -> float:
        return self.size[2]

    def local_corners(self) -> np.ndarray:
        return corners_from_pose(self.size, self.yaw)

    def world_corners(self) -> np.ndarray:
        return self.local_corners() + np.asarray(self.center)

    def with_center(self, center) -> "Box3D":
        return Box3D(tuple(float(c) for c in center), self.size, self.yaw, self.class_id, self.score)


def backproject(c: tuple[float, float], z: float, cam: CameraIntrinsics) -> np.ndarray:
    """Lift an image point (u, v) at depth z to camera coordinates."""
    if not z > 0:
        raise ValueError(f"depth must be positive, got {z}")
    u, v = c
    return np.array([(u - cam.cu) * z / cam.fu, (v - cam.cv) * z / cam.fv, z])


def project(p, cam: CameraIntrinsics) -> tuple[float, float]:
    """Project a camera-frame point to pixels. Z must be positive."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if not z > 0:
        raise BehindCameraError(f"cannot project point at Z={z}")
    return (cam.fu * x / z + cam.cu, cam.fv * y / z + cam.cv)


def project_points(pts: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Project an (N, 3) array of points; raises if any Z <= 0."""
    pts = np.asarray(pts, dtype=float)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError(f"point(s) at or behind the camera: min Z = {z.min()}")
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = cam.fu * pts[:, 0] / z + cam.cu
    out[:, 1] = cam.fv * pts[:, 1] / z + cam.cv
    return out


def box3d_to_box2d(box: Box3D, cam: CameraIntrinsics) -> Box2D:
    """Tight axis-aligned image rectangle around the 8 projected corners."""
    uv = project_points(box.world_corners(), cam)
    return Box2D.from_ltrb(uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())


def view_angle_to_yaw(phi: float, u_b: float, cam: CameraIntrinsics) -> float:
    """Convert an object-centric view angle to global yaw.

    The view angle is what an observer looking along the camera ray through
    the box's horizontal image position u_b sees; the global yaw additionally
    accounts for that ray's bearing.
    """
    return normalize_angle(phi - math.atan((u_b - cam.cu) / cam.fu))


def yaw_to_view_angle(yaw: float, u_b: float, cam: CameraIntrinsics) -> float:
    """Inverse of view_angle_to_yaw."""
    return normalize_angle(yaw + math.atan((u_b - cam.cu) / cam.fu))
