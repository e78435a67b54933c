"""Image-grid partitioning, object-to-cell assignment, and residual codecs.

A frame is divided into su x sv uniform cells; each foreground cell carries
regression targets for the object assigned to it (the closest-in-depth object
whose 2D box center falls within sigma_scope of the cell center).  Cells are
addressed as (i, j) with i the column (u direction) and j the row.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box2D, Box3D, CameraIntrinsics, backproject, box3d_to_box2d, pose_from_corners, project

DEFAULT_GRID_SHAPE = (39, 12)


@dataclass(frozen=True)
class GridSpec:
    su: int
    sv: int
    image_w: float
    image_h: float

    def __post_init__(self):
        if self.su < 1 or self.sv < 1:
            raise ValueError(f"grid must have at least one cell per axis, got {self.su}x{self.sv}")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError(f"image size must be positive, got {self.image_w}x{self.image_h}")

    @property
    def stride_u(self) -> float:
        return self.image_w / self.su

    @property
    def stride_v(self) -> float:
        return self.image_h / self.sv

    @property
    def default_sigma_scope(self) -> float:
        # 2x the cell stride diagonal; the assignment radius has no published value
        return 2.0 * math.hypot(self.stride_u, self.stride_v)

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        if not (0 <= i < self.su and 0 <= j < self.sv):
            raise IndexError(f"cell ({i}, {j}) outside {self.su}x{self.sv} grid")
        return ((i + 0.5) * self.stride_u, (j + 0.5) * self.stride_v)

    def centers(self) -> np.ndarray:
        """All cell centers as an (sv, su, 2) array of (u, v)."""
        u = (np.arange(self.su) + 0.5) * self.stride_u
        v = (np.arange(self.sv) + 0.5) * self.stride_v
        out = np.empty((self.sv, self.su, 2))
        out[:, :, 0] = u[None, :]
        out[:, :, 1] = v[:, None]
        return out


@dataclass
class Assignment:
    """Per-cell object index, -1 for background. Shape (sv, su)."""

    obj_index: np.ndarray

    def foreground_cells(self) -> list[tuple[tuple[int, int], int]]:
        """((i, j), object index) for every foreground cell, row-major order."""
        out = []
        sv, su = self.obj_index.shape
        for j in range(sv):
            for i in range(su):
                k = int(self.obj_index[j, i])
                if k >= 0:
                    out.append(((i, j), k))
        return out

    @property
    def num_foreground(self) -> int:
        return int((self.obj_index >= 0).sum())


def assign(objects: list[tuple[Box2D, float]], grid: GridSpec, sigma_scope: float | None = None) -> Assignment:
    """Assign objects to grid cells.

    A cell is foreground for the depth-closest object whose 2D box center is
    within sigma_scope (Euclidean pixels) of the cell center; depth ties go to
    the lowest object index.  An empty object list yields an all-background
    assignment.
    """
    if sigma_scope is None:
        sigma_scope = grid.default_sigma_scope
    if not sigma_scope > 0:
        raise ValueError(f"sigma_scope must be positive, got {sigma_scope}")

    idx = np.full((grid.sv, grid.su), -1, dtype=int)
    if not objects:
        return Assignment(idx)

    centers = grid.centers()  # (sv, su, 2)
    uv = np.array([[b.u, b.v] for b, _ in objects])  # (n, 2)
    z = np.array([zc for _, zc in objects])
    dist = np.linalg.norm(centers[:, :, None, :] - uv[None, None, :, :], axis=-1)  # (sv, su, n)
    in_scope = dist < sigma_scope

    # lexicographic (depth, index) minimum among in-scope candidates; the
    # stable sort keeps the lowest object index on exact depth ties
    order = np.argsort(z, kind="stable")
    best_z = np.full((grid.sv, grid.su), np.inf)
    for k in order:
        better = in_scope[:, :, k] & (z[k] < best_z)
        idx[better] = k
        best_z[better] = z[k]
    return Assignment(idx)


@dataclass
class CellTarget:
    """Per-cell regression targets or predictions.

    probs is a distribution over object classes plus background (last entry).
    Background cells carry probs only; all regression fields are None.
    box2d holds (w, h, du, dv): the 2D size plus center residuals from the
    cell center; center_res holds the projected-3D-center residuals.
    """

    probs: np.ndarray
    foreground: bool = False
    box2d: tuple[float, float, float, float] | None = None
    z: float | None = None
    center_res: tuple[float, float] | None = None
    corners: np.ndarray | None = None
    delta_center: np.ndarray | None = None
    delta_corners: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("probs must be a 1-D simplex over classes + background")
        if not math.isclose(float(p.sum()), 1.0, abs_tol=1e-6):
            raise ValueError(f"probs must sum to 1, got {p.sum()}")
        self.probs = p
        if self.foreground:
            if self.box2d is None or self.z is None or self.center_res is None or self.corners is None:
                raise ValueError("foreground cells need box2d, z, center_res and corners")
            if self.delta_center is None:
                self.delta_center = np.zeros(3)
            if self.delta_corners is None:
                self.delta_corners = np.zeros((8, 3))


def background_target(num_classes: int) -> CellTarget:
    probs = np.zeros(num_classes + 1)
    probs[-1] = 1.0
    return CellTarget(probs=probs)


def encode(box: Box3D, cell_center: tuple[float, float], cam: CameraIntrinsics, num_classes: int) -> CellTarget:
    """Build the regression target a foreground cell carries for an object.

    2D quantities come from projecting the 3D box; residuals are measured
    from the cell center.  Refinement deltas are zero for ground truth.
    """
    u_g, v_g = cell_center
    b2d = box3d_to_box2d(box, cam)
    u_c, v_c = project(box.center, cam)
    probs = np.zeros(num_classes + 1)
    if not (0 <= box.class_id < num_classes):
        raise ValueError(f"class_id {box.class_id} outside 0..{num_classes - 1}")
    probs[box.class_id] = 1.0
    return CellTarget(
        probs=probs,
        foreground=True,
        box2d=(b2d.w, b2d.h, b2d.u - u_g, b2d.v - v_g),
        z=box.z,
        center_res=(u_c - u_g, v_c - v_g),
        corners=box.local_corners(),
    )


def decode(target: CellTarget, cell_center: tuple[float, float], cam: CameraIntrinsics) -> Box3D:
    """Reconstruct a Box3D from a cell's targets (plus refinement deltas)."""
    if not target.foreground:
        raise ValueError("cannot decode a background cell")
    if not target.z > 0:
        raise ValueError(f"depth must be positive, got {target.z}")
    u_g, v_g = cell_center
    c = (u_g + target.center_res[0], v_g + target.center_res[1])
    center = backproject(c, target.z, cam) + np.asarray(target.delta_center, dtype=float)
    corners = np.asarray(target.corners, dtype=float) + np.asarray(target.delta_corners, dtype=float)
    size, yaw = pose_from_corners(corners)
    obj_probs = target.probs[:-1]
    class_id = int(np.argmax(obj_probs))
    return Box3D(tuple(center), size, yaw, class_id=class_id, score=float(obj_probs[class_id]))
