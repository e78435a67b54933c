"""KITTI-protocol evaluation: rotated IoU, AP, AOS, NMS, error curves.

BEV IoU intersects the yaw-rotated ground-plane rectangles by convex polygon
clipping; 3D IoU multiplies that intersection by the vertical overlap.
Matching is greedy in descending score order with single-use ground truths.
AP supports the 11-point and 40-point interpolations; AOS replaces the TP
indicator with the orientation similarity (1 + cos(dyaw)) / 2.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, normalize_angle

SLIVER_AREA = 1e-12  # intersection areas below this count as empty, m^2

# KITTI difficulty gates: max truncation, max occlusion, min 2D box height px
KITTI_DIFFICULTY = {
    "easy": (0.15, 0, 40.0),
    "moderate": (0.30, 1, 25.0),
    "hard": (0.50, 2, 25.0),
}

PAPER_IOU_THRESHOLDS = (0.1, 0.2, 0.3, 0.5, 0.7)


def bev_rect(box: Box3D) -> np.ndarray:
    """Ground-plane rectangle corners (4, 2) in (x, z), CCW before rotation."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = box.l / 2.0
    dz = box.w / 2.0
    local = np.array([[dx, dz], [-dx, dz], [-dx, -dz], [dx, -dz]])
    out = np.empty_like(local)
    out[:, 0] = box.x + local[:, 0] * c + local[:, 1] * s
    out[:, 1] = box.z - local[:, 0] * s + local[:, 1] * c
    return out


def polygon_area(poly) -> float:
    """Shoelace area (absolute value)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) / 2.0


def _signed_area(poly) -> float:
    acc = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return acc / 2.0


def clip_convex(subject, clip) -> list:
    """Sutherland-Hodgman clip of polygon `subject` by convex polygon `clip`.

    Both are sequences of (x, y); the clip polygon is reoriented CCW
    internally.  Points exactly on a clip edge are kept.
    """
    subject = [tuple(map(float, p)) for p in subject]
    clip = [tuple(map(float, p)) for p in clip]
    if _signed_area(clip) < 0:
        clip = clip[::-1]
    output = subject
    for i in range(len(clip)):
        if not output:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % len(clip)]
        input_list = output
        output = []
        prev = input_list[-1]
        prev_side = (bx - ax) * (prev[1] - ay) - (by - ay) * (prev[0] - ax)
        for cur in input_list:
            cur_side = (bx - ax) * (cur[1] - ay) - (by - ay) * (cur[0] - ax)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_edge_intersection(prev, cur, (ax, ay), (bx, by)))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_edge_intersection(prev, cur, (ax, ay), (bx, by)))
            prev, prev_side = cur, cur_side
    return output


def _edge_intersection(p, q, a, b):
    px, py = p
    qx, qy = q
    ax, ay = a
    bx, by = b
    d1x, d1y = qx - px, qy - py
    d2x, d2y = bx - ax, by - ay
    denom = d1x * d2y - d1y * d2x
    if denom == 0.0:
        return q  # parallel within rounding; endpoint is on the edge
    t = ((ax - px) * d2y - (ay - py) * d2x) / denom
    return (px + t * d1x, py + t * d1y)


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view IoU of the yaw-rotated ground rectangles, in [0, 1]."""
    area_a = a.l * a.w
    area_b = b.l * b.w
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    inter = polygon_area(clip_convex(bev_rect(a), bev_rect(b)))
    if inter < SLIVER_AREA:
        return 0.0
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: BEV intersection times vertical overlap, in [0, 1]."""
    area_a = a.l * a.w
    area_b = b.l * b.w
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    inter_area = polygon_area(clip_convex(bev_rect(a), bev_rect(b)))
    if inter_area < SLIVER_AREA:
        return 0.0
    y_overlap = min(a.y + a.h / 2.0, b.y + b.h / 2.0) - max(a.y - a.h / 2.0, b.y - b.h / 2.0)
    if y_overlap <= 0.0:
        return 0.0
    inter = inter_area * y_overlap
    union = area_a * a.h + area_b * b.h - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def _iou_fn(kind: str):
    if kind == "bev":
        return iou_bev
    if kind == "3d":
        return iou_3d
    raise ValueError(f"unknown IoU kind {kind!r}")


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    kind: str = "3d"  # "3d" or "bev"
    ap_points: int = 40  # 11 or 40
    distance_bins: tuple = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0)

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if self.kind not in ("3d", "bev"):
            raise ValueError(f"kind must be '3d' or 'bev', got {self.kind!r}")
        if self.ap_points not in (11, 40):
            raise ValueError(f"ap_points must be 11 or 40, got {self.ap_points}")
        edges = tuple(self.distance_bins)
        if any(edges[i] >= edges[i + 1] for i in range(len(edges) - 1)):
            raise ValueError(f"distance bins must be strictly increasing, got {edges}")
        object.__setattr__(self, "distance_bins", edges)


@dataclass
class MatchResult:
    """Per-detection outcome in descending score order.

    order: detection indices sorted by (-score, index).
    tp: True where the ranked detection matched a valid ground truth.
    ignored: True where it matched an ignored ground truth (excluded from
        ranking-based metrics entirely).
    matched_gt: ground-truth index or -1.
    iou: IoU with the matched ground truth (0 if unmatched).
    num_gt: count of valid (non-ignored) ground truths.
    """

    order: np.ndarray
    tp: np.ndarray
    ignored: np.ndarray
    matched_gt: np.ndarray
    iou: np.ndarray
    num_gt: int


def match_and_rank(dets: list, gts: list, cfg: EvalConfig, gt_ignored=None) -> MatchResult:
    """Greedy score-order matching; each ground truth is used at most once.

    A detection is a true positive iff its best-IoU unmatched valid ground
    truth reaches the threshold; valid ground truths are preferred over
    ignored ones, and a match to an ignored ground truth removes the
    detection from ranking without penalty.
    """
    iou_fn = _iou_fn(cfg.kind)
    if gt_ignored is None:
        gt_ignored = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gts)
    tp = np.zeros(len(dets), dtype=bool)
    ignored = np.zeros(len(dets), dtype=bool)
    matched = np.full(len(dets), -1, dtype=int)
    iou_out = np.zeros(len(dets))
    for rank, di in enumerate(order):
        best_iou, best_j = 0.0, -1
        best_ign_iou, best_ign_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou_fn(dets[di], gt)
            if v < cfg.iou_threshold:
                continue
            if gt_ignored[j]:
                if v > best_ign_iou:
                    best_ign_iou, best_ign_j = v, j
            elif v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0:
            taken[best_j] = True
            tp[rank] = True
            matched[rank] = best_j
            iou_out[rank] = best_iou
        elif best_ign_j >= 0:
            taken[best_ign_j] = True
            ignored[rank] = True
            matched[rank] = best_ign_j
            iou_out[rank] = best_ign_iou
    num_gt = sum(1 for j in range(len(gts)) if not gt_ignored[j])
    return MatchResult(np.array(order, dtype=int), tp, ignored, matched, iou_out, num_gt)


@dataclass
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    ap: float


def _interp_points(ap_points: int):
    if ap_points == 11:
        return [i / 10.0 for i in range(11)]
    return [(i + 1) / 40.0 for i in range(40)]


def _interpolated_ap(recalls, precisions, ap_points: int) -> float:
    pts = _interp_points(ap_points)
    total = 0.0
    for r in pts:
        best = 0.0
        for rec, prec in zip(recalls, precisions):
            if rec >= r and prec > best:
                best = prec
        total += best
    return total / len(pts)


def average_precision(flags, num_gt: int, cfg: EvalConfig) -> PRCurve:
    """PR curve and interpolated AP from ranked TP flags.

    flags: booleans in descending score order, ignored detections removed.
    """
    flags = np.asarray(flags, dtype=bool)
    if num_gt <= 0 or flags.size == 0:
        return PRCurve(np.zeros(0), np.zeros(0), 0.0)
    cum_tp = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    precisions = cum_tp / ranks
    recalls = cum_tp / num_gt
    ap = _interpolated_ap(recalls.tolist(), precisions.tolist(), cfg.ap_points)
    return PRCurve(recalls, precisions, ap)


def orientation_similarity_score(flags, similarities, num_gt: int, cfg: EvalConfig) -> float:
    """AP-style accumulation with per-TP orientation similarity payloads."""
    flags = np.asarray(flags, dtype=bool)
    sims = np.asarray(similarities, dtype=float)
    if num_gt <= 0 or flags.size == 0:
        return 0.0
    cum_sim = np.cumsum(np.where(flags, sims, 0.0))
    ranks = np.arange(1, flags.size + 1)
    os_vals = cum_sim / ranks
    recalls = np.cumsum(flags) / num_gt
    return _interpolated_ap(recalls.tolist(), os_vals.tolist(), cfg.ap_points)


def aos(dets: list, gts: list, cfg: EvalConfig, gt_ignored=None) -> float:
    """Average orientation similarity over a single frame's detections."""
    m = match_and_rank(dets, gts, cfg, gt_ignored)
    keep = ~m.ignored
    sims = np.zeros(len(m.order))
    for rank, di in enumerate(m.order):
        if m.tp[rank]:
            dyaw = normalize_angle(dets[di].yaw - gts[m.matched_gt[rank]].yaw)
            sims[rank] = (1.0 + math.cos(dyaw)) / 2.0
    return orientation_similarity_score(m.tp[keep], sims[keep], m.num_gt, cfg)


def nms_3d(dets: list, iou_threshold: float, kind: str = "bev") -> list:
    """Greedy non-maximum suppression, returned in descending score order."""
    iou_fn = _iou_fn(kind)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept = []
    for i in order:
        if any(iou_fn(dets[i], dets[j]) >= iou_threshold for j in kept):
            continue
        kept.append(i)
    return [dets[i] for i in kept]


@dataclass
class DistanceBinStat:
    lo: float
    hi: float
    count: int
    mean_error: float  # NaN when the bin is empty

    @property
    def empty(self) -> bool:
        return self.count == 0


def localization_error_curve(dets: list, gts: list, cfg: EvalConfig, gt_ignored=None) -> list:
    """Mean TP center error bucketed by ground-truth depth."""
    m = match_and_rank(dets, gts, cfg, gt_ignored)
    edges = cfg.distance_bins
    sums = np.zeros(len(edges) - 1)
    counts = np.zeros(len(edges) - 1, dtype=int)
    for rank, di in enumerate(m.order):
        if not m.tp[rank]:
            continue
        gt = gts[m.matched_gt[rank]]
        err = float(np.linalg.norm(np.asarray(dets[di].center) - np.asarray(gt.center)))
        depth = gt.z
        for b in range(len(edges) - 1):
            if edges[b] <= depth < edges[b + 1]:
                sums[b] += err
                counts[b] += 1
                break
    out = []
    for b in range(len(edges) - 1):
        mean = sums[b] / counts[b] if counts[b] else math.nan
        out.append(DistanceBinStat(edges[b], edges[b + 1], int(counts[b]), float(mean)))
    return out


# ---------------------------------------------------------------------------
# multi-frame accumulation


@dataclass
class FrameResult:
    scores: np.ndarray  # ranked detection scores (ignored removed)
    tp: np.ndarray
    similarity: np.ndarray
    center_error: np.ndarray  # NaN for FPs
    gt_depth: np.ndarray  # NaN for FPs
    num_gt: int


def evaluate_frame(dets: list, gts: list, cfg: EvalConfig, gt_ignored=None) -> FrameResult:
    m = match_and_rank(dets, gts, cfg, gt_ignored)
    keep = ~m.ignored
    n = int(keep.sum())
    scores = np.zeros(n)
    tp = np.zeros(n, dtype=bool)
    sims = np.zeros(n)
    errs = np.full(n, math.nan)
    depths = np.full(n, math.nan)
    k = 0
    for rank, di in enumerate(m.order):
        if m.ignored[rank]:
            continue
        scores[k] = dets[di].score
        if m.tp[rank]:
            gt = gts[m.matched_gt[rank]]
            tp[k] = True
            dyaw = normalize_angle(dets[di].yaw - gt.yaw)
            sims[k] = (1.0 + math.cos(dyaw)) / 2.0
            errs[k] = float(np.linalg.norm(np.asarray(dets[di].center) - np.asarray(gt.center)))
            depths[k] = gt.z
        k += 1
    return FrameResult(scores, tp, sims, errs, depths, m.num_gt)


@dataclass
class EvalSummary:
    curve: PRCurve
    ap: float
    aos: float
    loc_bins: list


def summarize(frame_results: list, cfg: EvalConfig) -> EvalSummary:
    """Merge per-frame matches (in frame order) and rank globally by score."""
    if frame_results:
        scores = np.concatenate([fr.scores for fr in frame_results])
        tp = np.concatenate([fr.tp for fr in frame_results])
        sims = np.concatenate([fr.similarity for fr in frame_results])
        errs = np.concatenate([fr.center_error for fr in frame_results])
        depths = np.concatenate([fr.gt_depth for fr in frame_results])
    else:
        scores = tp = sims = errs = depths = np.zeros(0)
    num_gt = sum(fr.num_gt for fr in frame_results)
    order = np.lexsort((np.arange(scores.size), -scores))
    tp = tp[order]
    sims = sims[order]
    curve = average_precision(tp, num_gt, cfg)
    aos_val = orientation_similarity_score(tp, sims, num_gt, cfg)

    edges = cfg.distance_bins
    sums = np.zeros(len(edges) - 1)
    counts = np.zeros(len(edges) - 1, dtype=int)
    for e, d in zip(errs, depths):
        if math.isnan(d):  # false positives carry no ground-truth depth
            continue
        for b in range(len(edges) - 1):
            if edges[b] <= d < edges[b + 1]:
                sums[b] += e
                counts[b] += 1
                break
    bins = [
        DistanceBinStat(edges[b], edges[b + 1], int(counts[b]), float(sums[b] / counts[b]) if counts[b] else math.nan)
        for b in range(len(edges) - 1)
    ]
    return EvalSummary(curve=curve, ap=curve.ap, aos=aos_val, loc_bins=bins)


# ---------------------------------------------------------------------------
# table emission


def write_ap_csv(path, rows: list) -> None:
    """rows: dicts with metric, iou, difficulty, ap, aos, num_gt."""
    fields = ["metric", "iou", "difficulty", "ap", "aos", "num_gt"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["ap"] = f"{row['ap']:.6f}"
            out["aos"] = f"{row['aos']:.6f}"
            writer.writerow(out)


def write_curves_json(path, entries: list) -> None:
    """entries: dicts with metric, iou, difficulty, recalls, precisions, ap, aos, loc_bins."""
    payload = []
    for e in entries:
        payload.append(
            {
                "metric": e["metric"],
                "iou": e["iou"],
                "difficulty": e.get("difficulty"),
                "ap": e["ap"],
                "aos": e["aos"],
                "recalls": [float(v) for v in e["recalls"]],
                "precisions": [float(v) for v in e["precisions"]],
                "loc_bins": [
                    {"lo": b.lo, "hi": b.hi, "count": b.count, "mean_error": None if b.empty else b.mean_error}
                    for b in e.get("loc_bins", [])
                ],
            }
        )
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
