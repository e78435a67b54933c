"""Generate frozen Monte-Carlo ground truth for rotated BEV IoU.

Samples random ground-plane rectangle pairs and estimates their IoU by
uniform point sampling, entirely independent of the polygon-clipping
implementation under test.  Results are written to tests/data/iou_mc_cases.json
and asserted against in the test suite.

Run from the repository root:

    python tests/oracles/gen_iou_mc.py

Takes several minutes (adaptive sampling, >= 1e7 points per pair).
"""

import json
import math
import os
import sys

import numpy as np

N_CASES = 1000
SEED = 20240817
MIN_SAMPLES = 10_000_000
MAX_SAMPLES = 60_000_000
CHUNK = 2_000_000
SIGMA_TARGET = 1.2e-4  # keeps |mc - truth| <= 1e-3 at ~8 sigma
OUT_PATH = os.path.join(os.path.dirname(__file__), "..", "data", "iou_mc_cases.json")


def rect_aabb(cx, cz, l, w, yaw):
    # extent of a rectangle rotated about the vertical axis
    ex = abs(l / 2 * math.cos(yaw)) + abs(w / 2 * math.sin(yaw))
    ez = abs(l / 2 * math.sin(yaw)) + abs(w / 2 * math.cos(yaw))
    return cx - ex, cx + ex, cz - ez, cz + ez


def inside(px, pz, cx, cz, l, w, yaw):
    # point-in-rectangle via the inverse rotation, no polygon code involved
    dx = px - cx
    dz = pz - cz
    c, s = math.cos(yaw), math.sin(yaw)
    x_loc = c * dx - s * dz
    z_loc = s * dx + c * dz
    return (np.abs(x_loc) <= l / 2) & (np.abs(z_loc) <= w / 2)


def mc_iou(rng, a, b):
    """Return (iou_estimate, n_samples, sigma_estimate)."""
    ax0, ax1, az0, az1 = rect_aabb(*a)
    bx0, bx1, bz0, bz1 = rect_aabb(*b)
    x0, x1 = max(ax0, bx0), min(ax1, bx1)
    z0, z1 = max(az0, bz0), min(az1, bz1)
    area_a = a[2] * a[3]
    area_b = b[2] * b[3]
    if x0 >= x1 or z0 >= z1:
        return 0.0, 0, 0.0
    region = (x1 - x0) * (z1 - z0)

    hits = 0
    n = 0
    while n < MAX_SAMPLES:
        px = rng.uniform(x0, x1, CHUNK)
        pz = rng.uniform(z0, z1, CHUNK)
        hit = inside(px, pz, *a) & inside(px, pz, *b)
        hits += int(hit.sum())
        n += CHUNK
        if n < MIN_SAMPLES:
            continue
        p = hits / n
        inter = p * region
        union = area_a + area_b - inter
        p_var = max(p * (1.0 - p), 1.0 / n)
        sigma_inter = region * math.sqrt(p_var / n)
        sigma_iou = sigma_inter * (union + inter) / union**2
        if sigma_iou <= SIGMA_TARGET:
            break

    p = hits / n
    inter = p * region
    union = area_a + area_b - inter
    p_var = max(p * (1.0 - p), 1.0 / n)
    sigma_inter = region * math.sqrt(p_var / n)
    return inter / union, n, sigma_inter * (union + inter) / union**2


def sample_case(rng):
    la, wa = rng.uniform(0.5, 5.0, 2)
    lb, wb = rng.uniform(0.5, 5.0, 2)
    yaw_a = rng.uniform(-math.pi, math.pi)
    yaw_b = rng.uniform(-math.pi, math.pi)
    # offsets chosen so the mix spans disjoint through near-identical pairs
    off = rng.uniform(-3.0, 3.0, 2)
    a = (0.0, 0.0, la, wa, yaw_a)
    b = (float(off[0]), float(off[1]), lb, wb, yaw_b)
    return a, b


def main():
    rng = np.random.default_rng(SEED)
    cases = []

    # case 0: the analytic 45-degree unit-square pair
    fixed = [((0.0, 0.0, 1.0, 1.0, 0.0), (0.0, 0.0, 1.0, 1.0, math.pi / 4))]
    for i in range(N_CASES):
        if i < len(fixed):
            a, b = fixed[i]
        else:
            a, b = sample_case(rng)
        iou, n, sigma = mc_iou(rng, a, b)
        cases.append(
            {
                "a": [round(v, 12) for v in a],
                "b": [round(v, 12) for v in b],
                "mc_iou": iou,
                "n_samples": n,
                "sigma": sigma,
            }
        )
        if (i + 1) % 50 == 0:
            print(f"{i + 1}/{N_CASES}", file=sys.stderr, flush=True)

    payload = {
        "seed": SEED,
        "sigma_target": SIGMA_TARGET,
        "min_samples": MIN_SAMPLES,
        "cases": cases,
    }
    out = os.path.abspath(OUT_PATH)
    with open(out, "w") as fh:
        json.dump(payload, fh)
    print(f"wrote {len(cases)} cases to {out}", file=sys.stderr)


if __name__ == "__main__":
    main()
