"""KITTI object-label and calibration text formats, plus conversions.

Label lines carry 15 whitespace-separated fields (type, truncated, occluded,
alpha, 2D bbox as left/top/right/bottom, dimensions as height/width/length,
location as x/y/z of the 3D box *bottom* center, rotation_y) with an optional
16th score on prediction files.  Floats are emitted at 6 decimal places.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Box2D, Box3D, CameraIntrinsics, box3d_to_box2d, normalize_angle

DEFAULT_CLASS_WHITELIST = ("Car", "Pedestrian", "Cyclist")


class LabelParseError(ValueError):
    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass
class KittiLabel:
    type: str
    truncated: float = 0.0
    occluded: int = 0
    alpha: float = 0.0
    bbox: tuple = (0.0, 0.0, 0.0, 0.0)  # left, top, right, bottom
    dimensions: tuple = (0.0, 0.0, 0.0)  # height, width, length
    location: tuple = (0.0, 0.0, 0.0)  # bottom-center of the 3D box
    rotation_y: float = 0.0
    score: float | None = None

    def __post_init__(self):
        left, top, right, bottom = self.bbox
        if right < left or bottom < top:
            raise ValueError(f"degenerate bbox {self.bbox}")

    @property
    def bbox_height(self) -> float:
        return self.bbox[3] - self.bbox[1]

    def box2d(self) -> Box2D:
        return Box2D.from_ltrb(*self.bbox)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def format_label(label: KittiLabel) -> str:
    parts = [
        label.type,
        _fmt(label.truncated),
        str(int(label.occluded)),
        _fmt(label.alpha),
        *(_fmt(v) for v in label.bbox),
        *(_fmt(v) for v in label.dimensions),
        *(_fmt(v) for v in label.location),
        _fmt(label.rotation_y),
    ]
    if label.score is not None:
        parts.append(_fmt(label.score))
    return " ".join(parts)


def parse_label_line(line: str, line_no: int | None = None, expect_score: bool | None = None) -> KittiLabel:
    fields_ = line.split()
    if len(fields_) not in (15, 16):
        raise LabelParseError(f"expected 15 or 16 fields, got {len(fields_)}", line_no)
    if expect_score is True and len(fields_) != 16:
        raise LabelParseError("prediction line missing the score field", line_no)
    if expect_score is False and len(fields_) != 15:
        raise LabelParseError("ground-truth line must not carry a score field", line_no)
    try:
        vals = [float(v) for v in fields_[1:]]
    except ValueError as exc:
        raise LabelParseError(f"non-numeric field: {exc}", line_no) from None
    return KittiLabel(
        type=fields_[0],
        truncated=vals[0],
        occluded=int(vals[1]),
        alpha=vals[2],
        bbox=tuple(vals[3:7]),
        dimensions=tuple(vals[7:10]),
        location=tuple(vals[10:13]),
        rotation_y=vals[13],
        score=vals[14] if len(vals) == 15 else None,
    )


def parse_label_file(text: str, expect_score: bool | None = None) -> list[KittiLabel]:
    labels = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        labels.append(parse_label_line(line, line_no, expect_score))
    return labels


def emit_label_file(labels: list[KittiLabel]) -> str:
    return "".join(format_label(lb) + "\n" for lb in labels)


@dataclass
class KittiCalib:
    """Calibration matrices keyed by name; P2 supplies the left-color camera."""

    matrices: dict = field(default_factory=dict)

    @property
    def p2(self) -> np.ndarray:
        return self.matrices["P2"]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        p2 = self.p2
        return CameraIntrinsics(fu=p2[0, 0], fv=p2[1, 1], cu=p2[0, 2], cv=p2[1, 2])


def parse_calib_file(text: str) -> KittiCalib:
    matrices = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        vals = rest.split()
        try:
            nums = [float(v) for v in vals]
        except ValueError as exc:
            raise LabelParseError(f"non-numeric calibration value: {exc}", line_no) from None
        if len(nums) == 12:
            matrices[key] = np.array(nums).reshape(3, 4)
        elif len(nums) == 9:
            matrices[key] = np.array(nums).reshape(3, 3)
        else:
            matrices[key] = np.array(nums)
    if "P2" not in matrices:
        raise LabelParseError("calibration file has no P2 entry")
    calib = KittiCalib(matrices)
    if not (calib.p2[0, 0] > 0 and calib.p2[1, 1] > 0):
        raise LabelParseError("P2 focal lengths must be positive")
    return calib


def emit_calib_file(calib: KittiCalib) -> str:
    lines = []
    for key, mat in calib.matrices.items():
        flat = np.asarray(mat).ravel()
        lines.append(key + ": " + " ".join(f"{v:.12e}" for v in flat))
    return "\n".join(lines) + "\n"


def calib_from_intrinsics(cam: CameraIntrinsics) -> KittiCalib:
    p2 = np.array([[cam.fu, 0.0, cam.cu, 0.0], [0.0, cam.fv, cam.cv, 0.0], [0.0, 0.0, 1.0, 0.0]])
    return KittiCalib({"P2": p2})


def alpha_from_yaw(yaw: float, location) -> float:
    """Observation angle: yaw minus the bearing of the object's position."""
    x, z = float(location[0]), float(location[2])
    return normalize_angle(yaw - math.atan2(x, z))


def yaw_from_alpha(alpha: float, location) -> float:
    x, z = float(location[0]), float(location[2])
    return normalize_angle(alpha + math.atan2(x, z))


def label_to_box3d(label: KittiLabel, class_ids: dict[str, int] | None = None) -> Box3D:
    """Convert a label to a Box3D with the geometric (not bottom) center.

    KITTI stores dimensions as (h, w, l) and the location at the bottom face;
    the Y axis points down, so the geometric center sits at y - h/2.
    """
    h, w, l = label.dimensions
    x, y, z = label.location
    class_id = 0
    if class_ids is not None:
        if label.type not in class_ids:
            raise KeyError(f"class {label.type!r} not in whitelist {sorted(class_ids)}")
        class_id = class_ids[label.type]
    return Box3D(
        center=(x, y - h / 2.0, z),
        size=(l, w, h),
        yaw=label.rotation_y,
        class_id=class_id,
        score=label.score if label.score is not None else 1.0,
    )


def box3d_to_label(
    box: Box3D,
    class_name: str,
    cam: CameraIntrinsics | None = None,
    truncated: float = 0.0,
    occluded: int = 0,
    with_score: bool = False,
) -> KittiLabel:
    """Inverse of label_to_box3d; the 2D bbox is projected when cam is given."""
    location = (box.x, box.y + box.h / 2.0, box.z)
    if cam is not None:
        b2d = box3d_to_box2d(box, cam)
        bbox = b2d.as_ltrb()
    else:
        bbox = (0.0, 0.0, 0.0, 0.0)
    return KittiLabel(
        type=class_name,
        truncated=truncated,
        occluded=occluded,
        alpha=alpha_from_yaw(box.yaw, location),
        bbox=bbox,
        dimensions=(box.h, box.w, box.l),
        location=location,
        rotation_y=box.yaw,
        score=box.score if with_score else None,
    )


def evaluation_ground_truth(
    labels: list[KittiLabel], whitelist=DEFAULT_CLASS_WHITELIST
) -> tuple[list[KittiLabel], list[KittiLabel]]:
    """Split labels into (kept, dropped): DontCare and off-whitelist rows drop."""
    kept, dropped = [], []
    for lb in labels:
        (kept if lb.type in whitelist else dropped).append(lb)
    return kept, dropped


def difficulty_ignore_flags(labels: list[KittiLabel], difficulty: str | None, gates: dict) -> list[bool]:
    """True for labels that fall outside a difficulty bin's gates."""
    if difficulty is None:
        return [False] * len(labels)
    max_trunc, max_occ, min_height = gates[difficulty]
    flags = []
    for lb in labels:
        flags.append(lb.truncated > max_trunc or lb.occluded > max_occ or lb.bbox_height < min_height)
    return flags


def with_score(label: KittiLabel, score: float) -> KittiLabel:
    return replace(label, score=score)
