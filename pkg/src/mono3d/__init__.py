"""Monocular 3D detection geometry, weak labels, box fitting, and evaluation."""

__version__ = "0.1.0"

from .geometry import (
    BehindCameraError,
    Box2D,
    Box3D,
    CameraIntrinsics,
    backproject,
    box3d_to_box2d,
    corners_from_pose,
    normalize_angle,
    pose_from_corners,
    project,
    view_angle_to_yaw,
)
from .weak_labels import ClassPrior, Track, default_intrinsics, pseudo_center, pseudo_depth

__all__ = [
    "BehindCameraError",
    "Box2D",
    "Box3D",
    "CameraIntrinsics",
    "ClassPrior",
    "Track",
    "__version__",
    "backproject",
    "box3d_to_box2d",
    "corners_from_pose",
    "default_intrinsics",
    "normalize_angle",
    "pose_from_corners",
    "project",
    "pseudo_center",
    "pseudo_depth",
    "view_angle_to_yaw",
]
