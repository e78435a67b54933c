"""Deterministic synthetic scenes and tracks with exact projection labels.

Objects sit on a flat ground plane (constant center height) inside the
camera frustum; every 2D box is the exact projection of its 3D box, so the
generated data doubles as an oracle for the geometry, pseudo-label, fitting
and evaluation code.  Everything is a pure function of (config, seed).
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box2D, Box3D, CameraIntrinsics, box3d_to_box2d
from .kitti_io import box3d_to_label, calib_from_intrinsics, emit_calib_file, emit_label_file
from .weak_labels import ClassPrior, Track, default_intrinsics

DEFAULT_CLASSES = ("Car", "Pedestrian")
DEFAULT_PRIOR_TABLE = {
    "Car": (3.88, 1.63, 1.53),
    "Pedestrian": (0.84, 0.66, 1.76),
}


@dataclass(frozen=True)
class SceneConfig:
    image_w: float = 1242.0
    image_h: float = 375.0
    cam: CameraIntrinsics | None = None  # None -> 0.8*width default rule
    n_objects: tuple[int, int] = (2, 6)
    depth_range: tuple[float, float] = (8.0, 55.0)
    classes: tuple[str, ...] = DEFAULT_CLASSES
    prior_sizes: dict = field(default_factory=lambda: dict(DEFAULT_PRIOR_TABLE))
    size_spread: float = 0.0  # relative sigma around the prior size
    yaw_mode: str = "uniform"  # "uniform" or "zero"
    ground_y: float = 0.9  # constant center height below the camera axis
    margin_px: float = 80.0
    box2d_noise_px: float = 0.0

    def __post_init__(self):
        if self.depth_range[0] <= 0 or self.depth_range[1] <= self.depth_range[0]:
            raise ValueError(f"bad depth range {self.depth_range}")
        if self.n_objects[0] < 0 or self.n_objects[1] < self.n_objects[0]:
            raise ValueError(f"bad object count range {self.n_objects}")
        if self.size_spread < 0 or self.box2d_noise_px < 0:
            raise ValueError("spreads must be non-negative")
        if self.yaw_mode not in ("uniform", "zero"):
            raise ValueError(f"unknown yaw mode {self.yaw_mode!r}")
        missing = [c for c in self.classes if c not in self.prior_sizes]
        if missing:
            raise ValueError(f"classes without prior sizes: {missing}")

    @property
    def camera(self) -> CameraIntrinsics:
        return self.cam if self.cam is not None else default_intrinsics(self.image_w, self.image_h)

    def priors(self) -> dict[str, ClassPrior]:
        return {name: ClassPrior(name, *self.prior_sizes[name]) for name in self.classes}


@dataclass
class SceneFrame:
    timestamp: float
    classes: tuple[str, ...]
    boxes: list[Box3D]
    boxes2d: list[Box2D]
    noisy_boxes2d: list[Box2D] | None = None

    def class_name(self, box: Box3D) -> str:
        return self.classes[box.class_id]


def _sample_box(cfg: SceneConfig, rng: np.random.Generator, cam: CameraIntrinsics) -> Box3D:
    class_id = int(rng.integers(0, len(cfg.classes)))
    base = np.array(cfg.prior_sizes[cfg.classes[class_id]], dtype=float)
    if cfg.size_spread > 0:
        scale = 1.0 + cfg.size_spread * rng.standard_normal(3)
        size = np.maximum(base * scale, 0.2 * base)
    else:
        size = base
    yaw = float(rng.uniform(-math.pi, math.pi)) if cfg.yaw_mode == "uniform" else 0.0
    half_diag = 0.5 * math.hypot(size[0], size[1])
    for _ in range(64):
        z = float(rng.uniform(*cfg.depth_range))
        if z - half_diag > 0.5:
            break
    u = float(rng.uniform(cfg.margin_px, cfg.image_w - cfg.margin_px))
    x = (u - cam.cu) * z / cam.fu
    return Box3D((x, cfg.ground_y, z), tuple(size), yaw, class_id=class_id)


def _noisy_box2d(box: Box2D, sigma: float, rng: np.random.Generator) -> Box2D:
    l, t, r, b = box.as_ltrb()
    dl, dt_, dr, db = rng.normal(0.0, sigma, 4)
    l, t, r, b = l + dl, t + dt_, r + dr, b + db
    if r - l < 0.5:
        mid = (l + r) / 2.0
        l, r = mid - 0.25, mid + 0.25
    if b - t < 0.5:
        mid = (t + b) / 2.0
        t, b = mid - 0.25, mid + 0.25
    return Box2D.from_ltrb(l, t, r, b)


def generate_scene(cfg: SceneConfig, seed: int, timestamp: float = 0.0) -> SceneFrame:
    """One frame; identical (cfg, seed) pairs give bit-identical frames."""
    rng = np.random.default_rng(seed)
    cam = cfg.camera
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    boxes = [_sample_box(cfg, rng, cam) for _ in range(n)]
    boxes2d = [box3d_to_box2d(b, cam) for b in boxes]
    noisy = None
    if cfg.box2d_noise_px > 0:
        noisy = [_noisy_box2d(b, cfg.box2d_noise_px, rng) for b in boxes2d]
    return SceneFrame(timestamp, cfg.classes, boxes, boxes2d, noisy)


def generate_track(
    cfg: SceneConfig,
    seed: int,
    n_frames: int,
    dt: float,
    accel_bound: float,
    max_speed: float = 4.0,
) -> tuple[list[SceneFrame], list[Track]]:
    """Frames of moving objects whose true acceleration stays within bound.

    Per-step accelerations are sampled with norm <= accel_bound (slightly
    inside, so finite differencing the exact kinematic positions never
    exceeds the bound); accel_bound 0 gives constant-velocity motion.
    Correspondences across frames are the object identities themselves.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if accel_bound < 0:
        raise ValueError("accel_bound must be non-negative")
    rng = np.random.default_rng(seed)
    cam = cfg.camera
    base = generate_scene(cfg, seed)
    n_obj = len(base.boxes)

    velocities = rng.uniform(-max_speed, max_speed, (n_obj, 3))
    velocities[:, 1] = 0.0  # stay on the ground plane
    accels = np.zeros((n_obj, max(n_frames - 1, 1), 3))
    if accel_bound > 0:
        direc = rng.standard_normal(accels.shape)
        norms = np.linalg.norm(direc, axis=2, keepdims=True)
        norms[norms == 0] = 1.0
        mags = rng.uniform(0.0, accel_bound * (1.0 - 1e-6), accels.shape[:2])[..., None]
        accels = direc / norms * mags
        accels[:, :, 1] = 0.0

    # keep every object safely in front of the camera over the whole track
    for k, box in enumerate(base.boxes):
        for _ in range(32):
            z = box.z
            vz = velocities[k, 2]
            ok = True
            for i in range(n_frames - 1):
                z = z + vz * dt + 0.5 * accels[k, i, 2] * dt * dt
                vz = vz + accels[k, i, 2] * dt
                if z < 2.0:
                    ok = False
                    break
            if ok:
                break
            velocities[k] *= 0.5
            accels[k] *= 0.5

    frames = []
    tracks = []
    centers = np.array([b.center for b in base.boxes], dtype=float)
    vel = velocities.copy()
    times = np.arange(n_frames) * dt
    all_centers = np.zeros((n_obj, n_frames, 3))
    for i in range(n_frames):
        all_centers[:, i] = centers
        boxes = [b.with_center(tuple(centers[k])) for k, b in enumerate(base.boxes)]
        boxes2d = [box3d_to_box2d(b, cam) for b in boxes]
        frames.append(SceneFrame(float(times[i]), cfg.classes, boxes, boxes2d))
        if i < n_frames - 1:
            a = accels[:, i]
            centers = centers + vel * dt + 0.5 * a * dt * dt
            vel = vel + a * dt
    for k in range(n_obj):
        tracks.append(Track(k, times.copy(), all_centers[k].copy()))
    return frames, tracks


@dataclass(frozen=True)
class DetectionNoise:
    sigma_center: float = 0.0  # per-axis meters
    sigma_depth: float = 0.0  # extra depth-only sigma, meters
    sigma_yaw: float = 0.0  # radians
    score_scale: float = 1.0  # score = exp(-|perturbation| / scale)

    def __post_init__(self):
        if min(self.sigma_center, self.sigma_depth, self.sigma_yaw) < 0 or self.score_scale <= 0:
            raise ValueError("noise sigmas must be non-negative and score_scale positive")


def perturb_detections(frame: SceneFrame, noise: DetectionNoise, seed: int) -> list[Box3D]:
    """Ground truth plus configured noise, scored by the noise magnitude."""
    rng = np.random.default_rng(seed)
    dets = []
    for box in frame.boxes:
        d_center = rng.normal(0.0, noise.sigma_center, 3) if noise.sigma_center > 0 else np.zeros(3)
        if noise.sigma_depth > 0:
            d_center[2] += rng.normal(0.0, noise.sigma_depth)
        d_yaw = float(rng.normal(0.0, noise.sigma_yaw)) if noise.sigma_yaw > 0 else 0.0
        magnitude = float(np.linalg.norm(d_center)) + abs(d_yaw)
        center = np.asarray(box.center) + d_center
        center[2] = max(center[2], 0.5)
        dets.append(
            Box3D(
                tuple(center),
                box.size,
                box.yaw + d_yaw,
                class_id=box.class_id,
                score=math.exp(-magnitude / noise.score_scale),
            )
        )
    return dets


def _truncation(box2d: Box2D, image_w: float, image_h: float) -> float:
    full = box2d.w * box2d.h
    if full <= 0:
        return 0.0
    l = max(box2d.left, 0.0)
    t = max(box2d.top, 0.0)
    r = min(box2d.right, image_w)
    b = min(box2d.bottom, image_h)
    visible = max(r - l, 0.0) * max(b - t, 0.0)
    return min(max(1.0 - visible / full, 0.0), 1.0)


def frame_to_labels(frame: SceneFrame, cfg: SceneConfig, with_score: bool = False) -> list:
    """KITTI labels for a frame; bbox is the exact projection."""
    cam = cfg.camera
    labels = []
    for box, b2d in zip(frame.boxes, frame.boxes2d):
        lb = box3d_to_label(
            box,
            frame.class_name(box),
            cam=cam,
            truncated=_truncation(b2d, cfg.image_w, cfg.image_h),
            with_score=with_score,
        )
        labels.append(lb)
    return labels


def export_frames(frames: list[SceneFrame], cfg: SceneConfig, out_dir, with_score: bool = False) -> list[str]:
    """Write label_2/ and calib/ directories; returns the frame stems."""
    label_dir = os.path.join(out_dir, "label_2")
    calib_dir = os.path.join(out_dir, "calib")
    os.makedirs(label_dir, exist_ok=True)
    os.makedirs(calib_dir, exist_ok=True)
    calib_text = emit_calib_file(calib_from_intrinsics(cfg.camera))
    stems = []
    for i, frame in enumerate(frames):
        stem = f"{i:06d}"
        with open(os.path.join(label_dir, stem + ".txt"), "w") as fh:
            fh.write(emit_label_file(frame_to_labels(frame, cfg, with_score=with_score)))
        with open(os.path.join(calib_dir, stem + ".txt"), "w") as fh:
            fh.write(calib_text)
        stems.append(stem)
    return stems
