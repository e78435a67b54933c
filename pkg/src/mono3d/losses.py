"""Training losses with analytic gradients w.r.t. the predicted quantities.

Classification uses cross entropy over every grid cell; all box quantities
use L1 summed over foreground cells.  Each function returns
(value, gradient) where the gradient has the prediction's shape; the L1
subgradient at zero is taken as zero.  Accumulation is plain numpy summation
in cell-index order, so results are bit-reproducible.
"""

from dataclasses import dataclass, fields

import numpy as np

PROB_FLOOR = 1e-12


def _l1(pred, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.abs(diff).sum()), np.sign(diff)


def loss_class(pred_probs, target_probs) -> tuple[float, np.ndarray]:
    """Cross entropy summed over cells (background cells included).

    pred_probs/target_probs: (n_cells, n_classes + 1) rows on the simplex.
    Probabilities are floored at 1e-12 inside the log; the gradient is zero
    where the floor is active.
    """
    p = np.asarray(pred_probs, dtype=float)
    t = np.asarray(target_probs, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    clamped = np.clip(p, PROB_FLOOR, 1.0)
    value = float(-(t * np.log(clamped)).sum())
    grad = np.where(p >= PROB_FLOOR, -t / clamped, 0.0)
    return value, grad


def loss_box2d(pred, target) -> tuple[float, np.ndarray]:
    """L1 over (w, h, du, dv) rows of foreground cells."""
    return _l1(pred, target)


def loss_depth(pred_z, target_z) -> tuple[float, np.ndarray]:
    """L1 over per-cell instance depths."""
    return _l1(pred_z, target_z)


def loss_center(pred_res, target_res) -> tuple[float, np.ndarray]:
    """L1 over projected-center residual pairs (du_c, dv_c)."""
    return _l1(pred_res, target_res)


def loss_corners(pred_corners, target_corners) -> tuple[float, np.ndarray]:
    """Component-wise L1 over (n_cells, 8, 3) local corners."""
    return _l1(pred_corners, target_corners)


def loss_refine_center(pred_delta, target_residual) -> tuple[float, np.ndarray]:
    """L1 between the predicted center correction and its target residual.

    Fully supervised, the residual is (true center - decoded center); in the
    weak setting the caller substitutes the first-order geometric correction.
    """
    return _l1(pred_delta, target_residual)


def loss_refine_corners(pred_delta, target_residual) -> tuple[float, np.ndarray]:
    return _l1(pred_delta, target_residual)


@dataclass(frozen=True)
class LossBreakdown:
    classification: float = 0.0
    box2d: float = 0.0
    depth: float = 0.0
    center: float = 0.0
    corners: float = 0.0
    refine_center: float = 0.0
    refine_corners: float = 0.0
    acceleration: float = 0.0
    total: float = 0.0


def combine_losses(weights=None, **components) -> LossBreakdown:
    """Sum weighted components into a LossBreakdown.

    Unspecified components default to 0; weights default to 1 for every task.
    """
    names = {f.name for f in fields(LossBreakdown)} - {"total"}
    unknown = set(components) - names
    if unknown:
        raise ValueError(f"unknown loss components: {sorted(unknown)}")
    weights = dict(weights or {})
    bad = set(weights) - names
    if bad:
        raise ValueError(f"unknown loss weights: {sorted(bad)}")
    weighted = {k: weights.get(k, 1.0) * v for k, v in components.items()}
    total = 0.0
    for name in sorted(weighted):
        total += weighted[name]
    return LossBreakdown(total=total, **weighted)
