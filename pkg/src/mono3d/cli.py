"""Command-line entry point.

Subcommands:
  synth        generate a synthetic KITTI-layout dataset (label_2/ + calib/)
  pseudolabel  turn 2D ground-truth labels into weak 3D labels via priors
  fit          refine 3D locations per object (minproj or geogl)
  eval         KITTI-style AP/AOS tables (CSV) and PR curves (JSON)
  gradcheck    finite-difference audit of every analytic gradient

Every run writes a manifest.json beside its outputs recording the command,
the effective config, the seed, input paths and output digests.  Errors are
reported as a JSON list on stderr with a nonzero exit code.  Config values
come from defaults, then an optional --config JSON file, then flags.
"""

import argparse
import concurrent.futures
import copy
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .fitters import FitConfig, fit_geogl, fit_min_proj_err, grad_check, pseudo_label_box
from .geometry import Box2D, CameraIntrinsics, view_angle_to_yaw
from .kitti_io import (
    DEFAULT_CLASS_WHITELIST,
    KittiLabel,
    LabelParseError,
    difficulty_ignore_flags,
    emit_label_file,
    label_to_box3d,
    parse_calib_file,
    parse_label_file,
)
from .losses import loss_box2d, loss_center, loss_class, loss_corners, loss_depth, loss_refine_center
from .metrics import (
    KITTI_DIFFICULTY,
    PAPER_IOU_THRESHOLDS,
    EvalConfig,
    FrameResult,
    evaluate_frame,
    summarize,
    write_ap_csv,
    write_curves_json,
)
from .synth import DetectionNoise, SceneConfig, export_frames, generate_scene, perturb_detections
from .weak_labels import (
    AccelConfig,
    DEFAULT_PRIORS,
    Track,
    acceleration_loss,
    default_intrinsics,
    load_priors,
    pseudo_center,
    pseudo_depth,
)

DEFAULT_CONFIG = {
    "seed": 0,
    "jobs": 1,
    "iou": list(PAPER_IOU_THRESHOLDS),
    "ap_points": 40,
    "metric": "both",  # 3d | bev | both
    "difficulty": None,  # easy | moderate | hard | None
    "classes": list(DEFAULT_CLASS_WHITELIST),
    "image_w": 1242.0,
    "image_h": 375.0,
    "synth": {
        "frames": 20,
        "n_objects": [2, 6],
        "depth_range": [8.0, 55.0],
        "size_spread": 0.0,
        "yaw_mode": "uniform",
        "ground_y": 0.9,
        "margin_px": 80.0,
        "box2d_noise_px": 0.0,
        "classes": ["Car", "Pedestrian"],
    },
    "fit": {"max_iters": 200, "step": 0.5, "tol": 1e-4},
    "distance_bins": [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
}


class CliError(Exception):
    """Carries a machine-readable error list."""

    def __init__(self, errors):
        self.errors = errors if isinstance(errors, list) else [errors]
        super().__init__("; ".join(str(e) for e in self.errors))


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path) as fh:
                cfg = _deep_merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from None
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir, command, config, inputs, outputs, seed=None) -> str:
    """Atomically write manifest.json listing config and output digests."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": [os.path.abspath(str(p)) for p in inputs],
        "outputs": {os.path.relpath(p, out_dir): _sha256(p) for p in sorted(outputs)},
    }
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _check_out_dir(out_dir, input_dirs):
    out_abs = os.path.abspath(out_dir)
    for d in input_dirs:
        if d and os.path.abspath(d) == out_abs:
            raise CliError(f"output directory {out_dir} must differ from input directory {d}")
    os.makedirs(out_dir, exist_ok=True)


def _frame_stems(directory) -> list[str]:
    if not os.path.isdir(directory):
        raise CliError(f"not a directory: {directory}")
    return sorted(os.path.splitext(f)[0] for f in os.listdir(directory) if f.endswith(".txt"))


def _camera_for(stem, calib_dir, image_w, image_h) -> CameraIntrinsics:
    if calib_dir:
        path = os.path.join(calib_dir, stem + ".txt")
        with open(path) as fh:
            return parse_calib_file(fh.read()).intrinsics
    return default_intrinsics(image_w, image_h)


def _labels_for(stem, label_dir, expect_score=None) -> list[KittiLabel]:
    path = os.path.join(label_dir, stem + ".txt")
    with open(path) as fh:
        return parse_label_file(fh.read(), expect_score=expect_score)


def _alpha_or_zero(label: KittiLabel) -> float:
    # KITTI marks an unknown observation angle with -10
    return label.alpha if -math.pi < label.alpha <= math.pi else 0.0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args, config) -> int:
    _check_out_dir(args.out, [])
    scfg = config["synth"]
    scene_cfg = SceneConfig(
        image_w=config["image_w"],
        image_h=config["image_h"],
        n_objects=tuple(scfg["n_objects"]),
        depth_range=tuple(scfg["depth_range"]),
        classes=tuple(scfg["classes"]),
        size_spread=scfg["size_spread"],
        yaw_mode=scfg["yaw_mode"],
        ground_y=scfg["ground_y"],
        margin_px=scfg["margin_px"],
        box2d_noise_px=scfg["box2d_noise_px"],
    )
    seed = config["seed"]
    frames = [generate_scene(scene_cfg, seed + i, timestamp=float(i)) for i in range(scfg["frames"])]
    stems = export_frames(frames, scene_cfg, args.out, with_score=False)
    outputs = [os.path.join(args.out, "label_2", s + ".txt") for s in stems]
    outputs += [os.path.join(args.out, "calib", s + ".txt") for s in stems]
    write_manifest(args.out, "synth", config, [], outputs, seed=seed)
    print(f"wrote {len(stems)} frames to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# pseudolabel


def _pseudo_label_object(label: KittiLabel, priors, cam) -> KittiLabel:
    if label.type not in priors:
        raise CliError(f"no prior size for class {label.type!r}")
    prior = priors[label.type]
    box2d = label.box2d()
    if not box2d.h > 0:
        raise CliError(f"degenerate 2D box height for a {label.type}")
    phi = _alpha_or_zero(label)
    box = pseudo_label_box(box2d, prior, cam, phi=phi)
    return KittiLabel(
        type=label.type,
        truncated=label.truncated,
        occluded=label.occluded,
        alpha=phi,
        bbox=label.bbox,
        dimensions=(prior.height, prior.width, prior.length),
        location=(box.x, box.y + box.h / 2.0, box.z),
        rotation_y=box.yaw,
        score=1.0,
    )


def cmd_pseudolabel(args, config) -> int:
    _check_out_dir(args.out, [args.labels, args.calib])
    priors = load_priors(args.priors) if args.priors else dict(DEFAULT_PRIORS)
    whitelist = set(config["classes"])
    stems = _frame_stems(args.labels)
    errors = []
    outputs = []
    out_label_dir = os.path.join(args.out, "label_2")
    os.makedirs(out_label_dir, exist_ok=True)
    for stem in stems:
        try:
            labels = _labels_for(stem, args.labels)
            cam = _camera_for(stem, args.calib, config["image_w"], config["image_h"])
            out_labels = [_pseudo_label_object(lb, priors, cam) for lb in labels if lb.type in whitelist]
        except (CliError, LabelParseError, OSError) as exc:
            errors.append({"frame": stem, "error": str(exc)})
            continue
        path = os.path.join(out_label_dir, stem + ".txt")
        with open(path, "w") as fh:
            fh.write(emit_label_file(out_labels))
        outputs.append(path)
    if errors:
        raise CliError(errors)
    write_manifest(
        args.out, "pseudolabel", config, [args.labels, args.calib or "", args.priors or ""], outputs, config["seed"]
    )
    print(f"pseudo-labeled {len(outputs)} frames into {args.out}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _fit_object(label: KittiLabel, priors, cam, mode, fit_cfg):
    if label.type not in priors:
        raise CliError(f"no prior size for class {label.type!r}")
    prior = priors[label.type]
    box2d = label.box2d()
    phi = _alpha_or_zero(label)
    if mode == "geogl":
        report = fit_geogl(box2d, prior, cam, fit_cfg, phi=phi)
    else:
        yaw = view_angle_to_yaw(phi, box2d.u, cam)
        init = pseudo_label_box(box2d, prior, cam, yaw=yaw).center
        report = fit_min_proj_err(box2d, yaw, prior, cam, init, fit_cfg)
    box = report.box
    out = KittiLabel(
        type=label.type,
        truncated=label.truncated,
        occluded=label.occluded,
        alpha=phi,
        bbox=label.bbox,
        dimensions=(prior.height, prior.width, prior.length),
        location=(box.x, box.y + box.h / 2.0, box.z),
        rotation_y=box.yaw,
        score=1.0,
    )
    return out, report


def cmd_fit(args, config) -> int:
    _check_out_dir(args.out, [args.labels, args.calib])
    priors = load_priors(args.priors) if args.priors else dict(DEFAULT_PRIORS)
    whitelist = set(config["classes"])
    fcfg = config["fit"]
    fit_cfg = FitConfig(max_iters=int(fcfg["max_iters"]), step=float(fcfg["step"]), tol=float(fcfg["tol"]))
    stems = _frame_stems(args.labels)
    errors = []
    outputs = []
    report_rows = []
    out_label_dir = os.path.join(args.out, "label_2")
    os.makedirs(out_label_dir, exist_ok=True)
    for stem in stems:
        try:
            labels = _labels_for(stem, args.labels)
            cam = _camera_for(stem, args.calib, config["image_w"], config["image_h"])
            out_labels = []
            for i, lb in enumerate(labels):
                if lb.type not in whitelist:
                    continue
                fitted, report = _fit_object(lb, priors, cam, args.mode, fit_cfg)
                out_labels.append(fitted)
                report_rows.append(
                    {
                        "frame": stem,
                        "object": i,
                        "iterations": report.iterations,
                        "objective": report.objective,
                        "converged": report.converged,
                    }
                )
        except (CliError, LabelParseError, OSError) as exc:
            errors.append({"frame": stem, "error": str(exc)})
            continue
        path = os.path.join(out_label_dir, stem + ".txt")
        with open(path, "w") as fh:
            fh.write(emit_label_file(out_labels))
        outputs.append(path)
    if errors:
        raise CliError(errors)
    report_path = os.path.join(args.out, "fit_report.jsonl")
    with open(report_path, "w") as fh:
        for row in report_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    outputs.append(report_path)
    write_manifest(
        args.out, "fit", config, [args.labels, args.calib or "", args.priors or ""], outputs, config["seed"]
    )
    print(f"fitted {len(report_rows)} objects ({args.mode}) into {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _eval_one_frame(task):
    """Worker: match one frame. task is picklable plain data."""
    (stem, pred_path, gt_path, kind, iou, ap_points, bins, whitelist, difficulty) = task
    with open(gt_path) as fh:
        gt_labels = parse_label_file(fh.read(), expect_score=False)
    with open(pred_path) as fh:
        det_labels = parse_label_file(fh.read(), expect_score=True)
    gt_labels = [lb for lb in gt_labels if lb.type in whitelist]
    det_labels = [lb for lb in det_labels if lb.type in whitelist]
    ignored = difficulty_ignore_flags(gt_labels, difficulty, KITTI_DIFFICULTY)
    gts = [label_to_box3d(lb) for lb in gt_labels]
    dets = [label_to_box3d(lb) for lb in det_labels]
    cfg = EvalConfig(iou_threshold=iou, kind=kind, ap_points=ap_points, distance_bins=bins)
    fr = evaluate_frame(dets, gts, cfg, gt_ignored=ignored)
    return (fr.scores, fr.tp, fr.similarity, fr.center_error, fr.gt_depth, fr.num_gt)


def cmd_eval(args, config) -> int:
    _check_out_dir(args.out, [args.pred, args.gt])
    gt_stems = _frame_stems(args.gt)
    if not gt_stems:
        raise CliError(f"no ground-truth frames in {args.gt}")
    errors = []
    for stem in gt_stems:
        if not os.path.exists(os.path.join(args.pred, stem + ".txt")):
            errors.append({"frame": stem, "error": "missing prediction file"})
    if errors:
        raise CliError(errors)

    kinds = ["3d", "bev"] if config["metric"] == "both" else [config["metric"]]
    thresholds = config["iou"] if isinstance(config["iou"], list) else [config["iou"]]
    bins = tuple(config["distance_bins"])
    whitelist = tuple(config["classes"])
    difficulty = config["difficulty"]
    jobs = max(1, int(config["jobs"]))

    rows = []
    curve_entries = []
    for kind in kinds:
        for iou in thresholds:
            tasks = [
                (
                    stem,
                    os.path.join(args.pred, stem + ".txt"),
                    os.path.join(args.gt, stem + ".txt"),
                    kind,
                    float(iou),
                    int(config["ap_points"]),
                    bins,
                    whitelist,
                    difficulty,
                )
                for stem in gt_stems
            ]
            if jobs > 1:
                with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                    raw = list(pool.map(_eval_one_frame, tasks))
            else:
                raw = [_eval_one_frame(t) for t in tasks]
            frames = [FrameResult(*r) for r in raw]
            cfg = EvalConfig(
                iou_threshold=float(iou), kind=kind, ap_points=int(config["ap_points"]), distance_bins=bins
            )
            summary = summarize(frames, cfg)
            num_gt = sum(fr.num_gt for fr in frames)
            rows.append(
                {
                    "metric": kind,
                    "iou": iou,
                    "difficulty": difficulty or "all",
                    "ap": summary.ap,
                    "aos": summary.aos,
                    "num_gt": num_gt,
                }
            )
            curve_entries.append(
                {
                    "metric": kind,
                    "iou": iou,
                    "difficulty": difficulty,
                    "ap": summary.ap,
                    "aos": summary.aos,
                    "recalls": summary.curve.recalls,
                    "precisions": summary.curve.precisions,
                    "loc_bins": summary.loc_bins,
                }
            )

    csv_path = os.path.join(args.out, "ap_table.csv")
    json_path = os.path.join(args.out, "curves.json")
    write_ap_csv(csv_path, rows)
    write_curves_json(json_path, curve_entries)
    write_manifest(args.out, "eval", config, [args.pred, args.gt], [csv_path, json_path], config["seed"])
    for row in rows:
        print(
            f"{row['metric']:>3} iou={row['iou']:<4} {row['difficulty']:<8} "
            f"AP={row['ap']:.4f} AOS={row['aos']:.4f} (gt={row['num_gt']})"
        )
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _gradcheck_battery(seed: int) -> list[dict]:
    """Finite-difference audits at random non-kink points for every gradient."""
    rng = np.random.default_rng(seed)
    checks = []

    def add(name, objective, params):
        checks.append({"name": name, "max_rel_dev": grad_check(objective, params)})

    n = 6
    t = rng.dirichlet(np.ones(4), size=n)
    p0 = rng.dirichlet(np.ones(4), size=n) * 0.8 + 0.05
    add("loss_class", lambda p: loss_class(p, t), p0)

    tgt = rng.normal(0, 5, (n, 4))
    pred = tgt + rng.choice([-1, 1], (n, 4)) * rng.uniform(0.2, 2.0, (n, 4))
    add("loss_box2d", lambda p: loss_box2d(p, tgt), pred)

    tz = rng.uniform(5, 50, n)
    pz = tz + rng.choice([-1, 1], n) * rng.uniform(0.2, 2.0, n)
    add("loss_depth", lambda p: loss_depth(p, tz), pz)

    tc = rng.normal(0, 10, (n, 2))
    pc = tc + rng.choice([-1, 1], (n, 2)) * rng.uniform(0.2, 2.0, (n, 2))
    add("loss_center", lambda p: loss_center(p, tc), pc)

    tk = rng.normal(0, 1, (n, 8, 3))
    pk = tk + rng.choice([-1, 1], (n, 8, 3)) * rng.uniform(0.2, 1.0, (n, 8, 3))
    add("loss_corners", lambda p: loss_corners(p, tk), pk)

    tr = rng.normal(0, 1, (n, 3))
    pr = tr + rng.choice([-1, 1], (n, 3)) * rng.uniform(0.2, 1.0, (n, 3))
    add("loss_refine_center", lambda p: loss_refine_center(p, tr), pr)

    times = np.arange(5) * 1.0
    centers = np.cumsum(rng.normal(0, 0.8, (5, 3)), axis=0)

    def accel_obj(flat):
        value, grads = acceleration_loss([Track(0, times, flat.reshape(5, 3))], AccelConfig())
        return value, grads[0].ravel()

    add("acceleration_loss", lambda p: accel_obj(p), centers.ravel())
    return checks


def cmd_gradcheck(args, config) -> int:
    _check_out_dir(args.out, [])
    checks = _gradcheck_battery(config["seed"])
    worst = max(c["max_rel_dev"] for c in checks)
    payload = {"seed": config["seed"], "checks": checks, "max_rel_dev": worst, "tolerance": 1e-4}
    report_path = os.path.join(args.out, "gradcheck.json")
    with open(report_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(args.out, "gradcheck", config, [], [report_path], config["seed"])
    for c in checks:
        print(f"{c['name']:<24} max rel dev {c['max_rel_dev']:.3e}")
    if worst > 1e-4:
        print(f"FAIL: worst deviation {worst:.3e} exceeds 1e-4", file=sys.stderr)
        return 1
    print(f"OK: worst deviation {worst:.3e}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mono3d", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help="RNG seed")
    parser.add_argument("--jobs", type=int, help="parallel frame workers")
    parser.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic KITTI-layout dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, help="number of frames")

    p = sub.add_parser("pseudolabel", help="weak 3D labels from 2D boxes and priors")
    p.add_argument("--labels", required=True, help="input label_2 directory (2D ground truth)")
    p.add_argument("--out", required=True)
    p.add_argument("--calib", help="calib directory; omit to use default intrinsics")
    p.add_argument("--priors", help="JSON prior-size table; omit for built-in priors")

    p = sub.add_parser("fit", help="refine 3D locations from 2D boxes")
    p.add_argument("--mode", required=True, choices=["minproj", "geogl"])
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--calib")
    p.add_argument("--priors")

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou", help="comma-separated IoU thresholds")
    p.add_argument("--ap-points", type=int, choices=[11, 40], dest="ap_points")
    p.add_argument("--metric", choices=["3d", "bev", "both"])
    p.add_argument("--difficulty", choices=["easy", "moderate", "hard"])

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--out", required=True)
    return parser


def _overrides_from_args(args) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "frames", None) is not None:
        overrides["synth"] = {"frames": args.frames}
    if getattr(args, "iou", None):
        overrides["iou"] = [float(v) for v in str(args.iou).split(",")]
    if getattr(args, "ap_points", None) is not None:
        overrides["ap_points"] = args.ap_points
    if getattr(args, "metric", None):
        overrides["metric"] = args.metric
    if getattr(args, "difficulty", None):
        overrides["difficulty"] = args.difficulty
    return overrides


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, _overrides_from_args(args))
        if args.dump_config:
            print(json.dumps(config, indent=2, sort_keys=True))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        handler = {
            "synth": cmd_synth,
            "pseudolabel": cmd_pseudolabel,
            "fit": cmd_fit,
            "eval": cmd_eval,
            "gradcheck": cmd_gradcheck,
        }[args.command]
        return handler(args, config)
    except CliError as exc:
        json.dump({"errors": exc.errors}, sys.stderr, indent=2, default=str)
        sys.stderr.write("\n")
        return 1
    except LabelParseError as exc:
        json.dump({"errors": [str(exc)]}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
