"""Geometry-guided pseudo labels from 2D boxes, class priors, and motion.

Without 3D ground truth, a rough depth comes from the similar-triangles
relation between the prior object height and the observed 2D box height;
the 2D box center stands in for the projected 3D center; and a first-order
correction maps 2D reprojection residuals back into 3D.  A kinematic
regularizer penalizes implausible accelerations over tracked centers.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    box3d_to_box2d,
    corners_from_pose,
    view_angle_to_yaw,
)


@dataclass(frozen=True)
class ClassPrior:
    """Per-class average dimensions (meters) used in place of true size."""

    name: str
    length: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError(f"prior dimensions must be positive, got {self}")

    @property
    def size(self) -> tuple[float, float, float]:
        return (self.length, self.width, self.height)


DEFAULT_PRIORS = {
    "Car": ClassPrior("Car", 3.88, 1.63, 1.53),
    "Pedestrian": ClassPrior("Pedestrian", 0.84, 0.66, 1.76),
    "Cyclist": ClassPrior("Cyclist", 1.76, 0.57, 1.73),
}


def load_priors(path) -> dict[str, ClassPrior]:
    """Read a JSON table mapping class name -> [length, width, height]."""
    with open(path) as fh:
        raw = json.load(fh)
    priors = {}
    for name, dims in raw.items():
        if len(dims) != 3:
            raise ValueError(f"prior for {name!r} must be [length, width, height], got {dims}")
        priors[name] = ClassPrior(name, *map(float, dims))
    return priors


def save_priors(priors: dict[str, ClassPrior], path) -> None:
    with open(path, "w") as fh:
        json.dump({n: list(p.size) for n, p in priors.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def default_intrinsics(image_w: float, image_h: float) -> CameraIntrinsics:
    """Fallback camera when no calibration exists.

    Focal length 0.8x the image width on both axes, principal point at the
    image center.
    """
    f = 0.8 * image_w
    return CameraIntrinsics(f, f, image_w / 2.0, image_h / 2.0)


def pseudo_depth(box: Box2D, prior: ClassPrior, cam: CameraIntrinsics) -> float:
    """Rough instance depth: fv * prior_height / observed 2D height."""
    if not box.h > 0:
        raise ValueError(f"2D box height must be positive, got {box.h}")
    return cam.fv * prior.height / box.h


def pseudo_center(box: Box2D) -> tuple[float, float]:
    """The 2D box center, standing in for the projected 3D center."""
    return (box.u, box.v)


def rescale_depth(z: float, true_h: float, prior_h: float, true_fv: float, assumed_fv: float) -> float:
    """Correct a prior-based depth once the real height and focal are known.

    Multiplies by true_h * assumed_fv / (prior_h * true_fv).
    """
    if not (true_h > 0 and prior_h > 0 and true_fv > 0 and assumed_fv > 0):
        raise ValueError("heights and focal lengths must be positive")
    return z * (true_h * assumed_fv) / (prior_h * true_fv)


def first_order_delta(est: Box3D, gt2d: Box2D, prior: ClassPrior, cam: CameraIntrinsics) -> np.ndarray:
    """First-order 3D center correction from 2D reprojection residuals.

    Projects the estimate, takes the (du, dv, dh) residuals to the ground
    truth 2D box, and maps them through the partial derivatives of the
    back-projection (for X, Y) and of the prior-height depth relation
    (for Z).  The width residual does not enter the correction.
    """
    proj = box3d_to_box2d(est, cam)
    if not proj.h > 0:
        raise ValueError("estimate projects to a degenerate 2D box")
    db_u = gt2d.u - proj.u
    db_v = gt2d.v - proj.v
    dh = gt2d.h - proj.h
    z = est.z
    return np.array(
        [
            (z / cam.fu) * db_u,
            (z / cam.fv) * db_v,
            (-cam.fv * prior.height / proj.h**2) * dh,
        ]
    )


def corners_from_teacher(phi: float, box: Box2D, prior: ClassPrior, cam: CameraIntrinsics) -> np.ndarray:
    """Local corners from a view-angle estimate plus the class prior size."""
    yaw = view_angle_to_yaw(phi, box.u, cam)
    return corners_from_pose(prior.size, yaw)


@dataclass(frozen=True)
class AccelConfig:
    alpha: float = 0.3  # acceleration threshold, m/s^2
    beta: float = 3.0  # loss clip

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


@dataclass
class Track:
    """One object's timestamped center estimates across frames."""

    obj_id: int
    times: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.centers = np.asarray(self.centers, dtype=float)
        if self.centers.shape != (self.times.size, 3):
            raise ValueError(f"centers must be ({self.times.size}, 3), got {self.centers.shape}")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError(f"track {self.obj_id}: timestamps must be strictly increasing")


def acceleration_loss(
    tracks: list[Track], cfg: AccelConfig = AccelConfig(), norm: str = "euclidean"
) -> tuple[float, list[np.ndarray]]:
    """Clipped excess-acceleration penalty over tracked centers.

    Finite-difference velocities and accelerations are formed per track;
    each acceleration contributes clip(|a| - alpha, 0, beta).  Returns the
    summed loss and per-track gradients w.r.t. the centers (zero wherever
    the clip is flat).  Tracks with fewer than three frames contribute
    nothing.  norm selects the acceleration magnitude: "euclidean" or "l1".
    """
    if norm not in ("euclidean", "l1"):
        raise ValueError(f"unknown norm {norm!r}")
    total = 0.0
    grads = []
    for track in tracks:
        t = np.asarray(track.times, dtype=float)
        c = np.asarray(track.centers, dtype=float)
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"track {track.obj_id}: timestamps must be strictly increasing")
        grad = np.zeros_like(c)
        n = t.size
        if n < 3:
            grads.append(grad)
            continue
        dt = t[:-1] - t[1:]  # negative of the frame spacing
        vel = (c[:-1] - c[1:]) / dt[:, None]
        acc = (vel[:-1] - vel[1:]) / dt[: n - 2, None]
        if norm == "euclidean":
            mag = np.linalg.norm(acc, axis=1)
        else:
            mag = np.abs(acc).sum(axis=1)
        excess = mag - cfg.alpha
        total += float(np.clip(excess, 0.0, cfg.beta).sum())

        active = (excess > 0.0) & (excess < cfg.beta)
        for i in np.nonzero(active)[0]:
            if norm == "euclidean":
                if mag[i] == 0.0:
                    continue
                dmag = acc[i] / mag[i]
            else:
                dmag = np.sign(acc[i])
            # a_i = (v_i - v_{i+1}) / dt_i with v_j = (c_j - c_{j+1}) / dt_j
            da_dv_i = 1.0 / dt[i]
            g_v_i = dmag * da_dv_i
            g_v_i1 = -g_v_i
            grad[i] += g_v_i / dt[i]
            grad[i + 1] += -g_v_i / dt[i] + g_v_i1 / dt[i + 1]
            grad[i + 2] += -g_v_i1 / dt[i + 1]
        grads.append(grad)
    return total, grads
