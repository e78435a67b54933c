"""Numerical 3D-box recovery from 2D evidence.

Two fitters, both optimizing only the 3D center (yaw and size stay fixed):

  - fit_min_proj_err: gradient descent with backtracking on the L1
    discrepancy between the projected box extents and an observed 2D box.
  - fit_geogl: pseudo-label initialization followed by repeated first-order
    geometric corrections of the center.

Both are deterministic: identical inputs and config give bit-identical
reports.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box2D, Box3D, CameraIntrinsics, backproject, box3d_to_box2d, corners_from_pose
from .weak_labels import ClassPrior, first_order_delta, pseudo_center, pseudo_depth, view_angle_to_yaw

MIN_DEPTH = 0.1  # feasible-set floor for the center depth, meters
_MIN_STEP = 1e-12  # line-search abandon threshold, meters


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 200
    step: float = 0.5  # initial line-search step length, meters
    tol: float = 1e-4  # stop when the accepted update is shorter than this, meters
    armijo_c: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class FitReport:
    box: Box3D
    iterations: int
    objective: float
    converged: bool


def _projected_extents(center: np.ndarray, local_corners: np.ndarray, cam: CameraIntrinsics):
    """(w, h, u, v) of the projected box plus the 4x3 Jacobian w.r.t. center.

    Returns (None, None) if any corner falls at or behind the camera.
    """
    pts = local_corners + center
    z = pts[:, 2]
    if np.any(z <= 0):
        return None, None
    u = cam.fu * pts[:, 0] / z + cam.cu
    v = cam.fv * pts[:, 1] / z + cam.cv
    iu_max, iu_min = int(np.argmax(u)), int(np.argmin(u))
    iv_max, iv_min = int(np.argmax(v)), int(np.argmin(v))

    def du_dc(k):
        return np.array([cam.fu / z[k], 0.0, -cam.fu * pts[k, 0] / z[k] ** 2])

    def dv_dc(k):
        return np.array([0.0, cam.fv / z[k], -cam.fv * pts[k, 1] / z[k] ** 2])

    vals = np.array(
        [
            u[iu_max] - u[iu_min],
            v[iv_max] - v[iv_min],
            (u[iu_max] + u[iu_min]) / 2.0,
            (v[iv_max] + v[iv_min]) / 2.0,
        ]
    )
    jac = np.stack(
        [
            du_dc(iu_max) - du_dc(iu_min),
            dv_dc(iv_max) - dv_dc(iv_min),
            (du_dc(iu_max) + du_dc(iu_min)) / 2.0,
            (dv_dc(iv_max) + dv_dc(iv_min)) / 2.0,
        ]
    )
    return vals, jac


def _l1_objective(center, local_corners, target, cam):
    vals, jac = _projected_extents(center, local_corners, cam)
    if vals is None:
        return math.inf, None
    resid = vals - target
    return float(np.abs(resid).sum()), np.sign(resid) @ jac


def _min_norm_subgradient(resid: np.ndarray, jac: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Minimum-norm element of the L1 subdifferential.

    Residuals flagged active are treated as sitting on their kink; their
    sign weights are chosen in [-1, 1] to minimize the subgradient norm
    (coordinate descent on the resulting box-constrained quadratic).  The
    negative of the result is the steepest descent direction of the
    piecewise-smooth objective.
    """
    fixed = np.sign(np.where(active, 0.0, resid)) @ jac
    rows = jac[active]
    if rows.shape[0] == 0:
        return fixed
    s = np.zeros(rows.shape[0])
    for _ in range(50):
        changed = 0.0
        for i in range(rows.shape[0]):
            denom = float(rows[i] @ rows[i])
            if denom == 0.0:
                continue
            rest = fixed + (s @ rows) - s[i] * rows[i]
            new = min(1.0, max(-1.0, -float(rows[i] @ rest) / denom))
            changed = max(changed, abs(new - s[i]))
            s[i] = new
        if changed < 1e-12:
            break
    return fixed + s @ rows


def fit_min_proj_err(
    gt2d: Box2D,
    yaw: float,
    prior: ClassPrior,
    cam: CameraIntrinsics,
    init,
    cfg: FitConfig = FitConfig(),
) -> FitReport:
    """Recover the 3D center that best reprojects onto an observed 2D box.

    Minimizes |dw| + |dh| + |du| + |dv| between the projected box (prior
    size, fixed yaw) and gt2d by steepest descent with a halving backtracking
    line search; candidate depths are projected onto Z >= 0.1 m.
    Non-convergence within max_iters is reported, not raised.
    """
    if not (gt2d.w > 0 and gt2d.h > 0):
        raise ValueError(f"degenerate 2D box: w={gt2d.w}, h={gt2d.h}")
    init = np.asarray(init, dtype=float)
    if not init[2] > 0:
        raise ValueError(f"initial depth must be positive, got {init[2]}")

    local = corners_from_pose(prior.size, yaw)
    target = np.array([gt2d.w, gt2d.h, gt2d.u, gt2d.v])
    x = init.copy()
    x[2] = max(x[2], MIN_DEPTH)

    def evaluate(center):
        vals, jac = _projected_extents(center, local, cam)
        if vals is None:
            return math.inf, None, None
        resid = vals - target
        return float(np.abs(resid).sum()), resid, jac

    f, resid, jac = evaluate(x)
    converged = False
    iterations = 0

    # Residuals whose kink is reachable within the current trial step are
    # treated as active, and the descent direction is the min-norm
    # subgradient over them; this follows kink ridges instead of bouncing
    # across them, recomputing the direction as the step halves.
    while iterations < cfg.max_iters:
        if resid is None:
            break  # projects behind the camera; nothing to descend on
        row_norms = np.linalg.norm(jac, axis=1)
        s = cfg.step
        step_len = None
        stationary = True
        while s >= _MIN_STEP:
            active = np.abs(resid) <= s * row_norms
            g = _min_norm_subgradient(resid, jac, active)
            gnorm = float(np.linalg.norm(g))
            if gnorm == 0.0:
                s /= 2.0
                continue
            stationary = False
            cand = x + s * (-g / gnorm)
            cand[2] = max(cand[2], MIN_DEPTH)
            f_new, resid_new, jac_new = evaluate(cand)
            if f_new <= f - cfg.armijo_c * s * gnorm:
                step_len = float(np.linalg.norm(cand - x))
                x, f, resid, jac = cand, f_new, resid_new, jac_new
                break
            s /= 2.0
        if step_len is None:
            # no decrease at any step length: a (local) minimum of the
            # piecewise objective, or exactly stationary
            converged = stationary or f == 0.0
            break
        iterations += 1
        if step_len < cfg.tol:
            converged = True
            break

    box = Box3D(tuple(x), prior.size, yaw, score=1.0)
    return FitReport(box=box, iterations=iterations, objective=f, converged=converged)


def fit_geogl(
    gt2d: Box2D,
    prior: ClassPrior,
    cam: CameraIntrinsics,
    cfg: FitConfig = FitConfig(),
    *,
    phi: float | None = None,
    yaw: float | None = None,
) -> FitReport:
    """Pseudo-label a 2D box and refine the center by first-order corrections.

    The center starts at the back-projected pseudo center/depth; orientation
    comes either from a view angle phi (converted through the box's
    horizontal position) or directly as yaw -- exactly one must be given.
    Corrections are applied until their norm drops below cfg.tol or
    max_iters is reached; the reported objective is the final reprojection
    residual |du| + |dv| + |dh| in pixels.  A config whose tol exceeds the
    first correction returns the pure pseudo-label box unchanged.
    """
    if (phi is None) == (yaw is None):
        raise ValueError("provide exactly one of phi or yaw")
    if yaw is None:
        yaw = view_angle_to_yaw(phi, gt2d.u, cam)

    z0 = pseudo_depth(gt2d, prior, cam)
    center = backproject(pseudo_center(gt2d), z0, cam)
    box = Box3D(tuple(center), prior.size, yaw, score=1.0)

    def residual(b: Box3D) -> float:
        proj = box3d_to_box2d(b, cam)
        return abs(gt2d.u - proj.u) + abs(gt2d.v - proj.v) + abs(gt2d.h - proj.h)

    iterations = 0
    converged = False
    for _ in range(cfg.max_iters):
        delta = first_order_delta(box, gt2d, prior, cam)
        if float(np.linalg.norm(delta)) < cfg.tol:
            converged = True
            break
        cand = box.with_center(np.asarray(box.center) + delta)
        if cand.z < MIN_DEPTH:
            cand = cand.with_center((cand.x, cand.y, MIN_DEPTH))
        box = cand
        iterations += 1
    else:
        converged = float(np.linalg.norm(first_order_delta(box, gt2d, prior, cam))) < cfg.tol
    return FitReport(box=box, iterations=iterations, objective=residual(box), converged=converged)


def pseudo_label_box(gt2d: Box2D, prior: ClassPrior, cam: CameraIntrinsics, *, phi=None, yaw=None) -> Box3D:
    """The pure pseudo-label box (geogl with zero correction steps)."""
    report = fit_geogl(gt2d, prior, cam, FitConfig(max_iters=1, tol=math.inf), phi=phi, yaw=yaw)
    return report.box


def grad_check(objective, params: np.ndarray, step: float = 1e-5) -> float:
    """Max relative deviation between analytic and central-difference gradients.

    objective(params) must return (value, gradient).  The relative scale per
    coordinate is max(|analytic|, |numeric|, 1.0), so near-zero gradients are
    compared absolutely.
    """
    params = np.asarray(params, dtype=float)
    _, grad = objective(params)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.shape}")
    worst = 0.0
    flat = params.ravel()
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = step
        fp, _ = objective((flat + bump).reshape(params.shape))
        fm, _ = objective((flat - bump).reshape(params.shape))
        fd = (fp - fm) / (2.0 * step)
        an = grad.ravel()[i]
        scale = max(abs(fd), abs(an), 1.0)
        worst = max(worst, abs(fd - an) / scale)
    return worst
