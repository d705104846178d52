"""Batch command-line surface.

Subcommands: eval, gated-bench, match-demo, distill-loss, mgiou, synth.
Output defaults to JSON (lines); --table renders human tables. Exit codes:
0 ok, 2 input error, 3 internal invariant violation (gated/dense mismatch).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dataio, synthetic
from .detections import Detection, GroundTruthObject, Prediction, detection_sets_equal
from .geometry import Box2D, Box3D, check_rotation, yaw_to_rotation
from .heads import FeatureMapSet
from .inference import (
    MODE_DENSE,
    MODE_GATED,
    dense_classify,
    dense_regression,
    decode_detections,
    extract_patches,
    gated_heads,
    gather_dense,
    infer,
    stage_mac_counts,
    topk_select,
)
from .distill import DistillPair, distill_loss, importance_omega, quality_eta
from .eval_kitti import evaluate
from .matching import assign

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3


class InputError(Exception):
    pass


def _load_config(args) -> dataio.RunConfig:
    try:
        config = dataio.load_config(getattr(args, "config", None))
        overrides = getattr(args, "set", None) or []
        return dataio.apply_overrides(config, overrides)
    except (OSError, dataio.ConfigError) as exc:
        raise InputError(str(exc)) from None


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# --- eval --------------------------------------------------------------------


def _render_eval_table(report) -> str:
    lines = [f"{'class':<12} {'metric':<5} {'difficulty':<10} {'AP':>7} {'n_gt':>6}"]
    for e in report.entries:
        lines.append(f"{e.class_name:<12} {e.metric:<5} {e.difficulty:<10} {e.ap:7.2f} {e.n_gt:6d}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    config = _load_config(args)
    if not os.path.isdir(args.gt):
        raise InputError(f"ground-truth directory not found: {args.gt}")
    if not os.path.isdir(args.pred):
        raise InputError(f"prediction directory not found: {args.pred}")
    names = sorted(n for n in os.listdir(args.gt) if n.endswith(".txt"))
    if not names:
        raise InputError(f"no label files in {args.gt}")
    for name in names:
        if not os.path.isfile(os.path.join(args.pred, name)):
            raise InputError(f"missing prediction file: {os.path.join(args.pred, name)}")

    def load_pair(name):
        gt_objs = dataio.parse_kitti_label_file(os.path.join(args.gt, name))
        pred_objs = dataio.parse_kitti_label_file(os.path.join(args.pred, name))
        return gt_objs, pred_objs

    try:
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                loaded = list(pool.map(load_pair, names))  # merged in file order
        else:
            loaded = [load_pair(n) for n in names]
    except dataio.KittiParseError as exc:
        raise InputError(str(exc)) from None

    class_to_id = config.class_to_id
    gts_per_image, dets_per_image = [], []
    for gt_objs, pred_objs in loaded:
        gts_per_image.append([o.to_ground_truth(class_to_id) for o in gt_objs if o.cls in class_to_id])
        dets = []
        for o in pred_objs:
            if o.cls not in class_to_id:
                continue
            if o.score is None:
                raise InputError("prediction line without score field")
            dets.append(o.to_detection(class_to_id))
        dets_per_image.append(dets)

    report = evaluate(gts_per_image, dets_per_image, list(config.classes), config.iou_thresholds)
    payload = report.to_json_dict()
    payload["n_images"] = len(names)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.pr_csv:
        with open(args.pr_csv, "w", encoding="utf-8") as fh:
            fh.write("class,metric,difficulty,recall,precision\n")
            for e in report.entries:
                for r, p in zip(np.arange(1, 41) / 40.0, e.precisions):
                    fh.write(f"{e.class_name},{e.metric},{e.difficulty},{r:.4f},{p:.6f}\n")
    if args.table:
        print(_render_eval_table(report))
    else:
        _print_json(payload)
    return EXIT_OK


# --- gated-bench ---------------------------------------------------------------


def _time_stage(fn, repeat):
    times = []
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, statistics.median(times)


def cmd_gated_bench(args) -> int:
    config = _load_config(args)
    try:
        head_set = dataio.load_head_set(args.weights)
    except (OSError, dataio.ContainerFormatError) as exc:
        raise InputError(str(exc)) from None
    try:
        c, h8, w8 = (int(v) for v in args.shape.split(","))
    except ValueError:
        raise InputError(f"--shape must be C,H8,W8, got {args.shape!r}") from None
    if c != head_set.in_channels:
        raise InputError(f"weights expect {head_set.in_channels} input channels, shape says {c}")
    rng = np.random.default_rng(args.seed)
    features = FeatureMapSet(
        maps={
            8: rng.normal(0.0, 1.0, (c, h8, w8)).astype(np.float32),
            16: rng.normal(0.0, 1.0, (c, max(h8 // 2, 1), max(w8 // 2, 1))).astype(np.float32),
        }
    )
    intrinsics = dataio.CameraIntrinsics(700.0, 700.0, 640.0, 192.0)
    mean_dims = config.mean_dims_array()
    k = args.k

    score_maps, t_cls = _time_stage(lambda: dense_classify(features, head_set.cls), args.repeat)
    centers = topk_select(score_maps, k)
    patches, t_patch = _time_stage(lambda: extract_patches(features, centers), args.repeat)
    raw_gated, t_gated = _time_stage(lambda: gated_heads(patches, head_set), args.repeat)
    dense_maps, t_dense = _time_stage(lambda: dense_regression(features, head_set), args.repeat)
    raw_dense = gather_dense(dense_maps, centers)
    decode = lambda raw: decode_detections(raw, centers, intrinsics, mean_dims, config.orientation_mode)
    dets_gated, t_decode = _time_stage(lambda: decode(raw_gated), args.repeat)
    dets_dense = decode(raw_dense)

    equivalent = detection_sets_equal(dets_gated, dets_dense)
    macs = stage_mac_counts(head_set, features, k)
    ratio = macs["regression_gated"] / macs["regression_dense"]
    payload = {
        "equivalence": "PASS" if equivalent else "FAIL",
        "k": k,
        "locations": features.total_locations,
        "macs": macs,
        "head_mac_ratio": ratio,
        "median_seconds": {
            "classification_dense": t_cls,
            "patch_extraction": t_patch,
            "regression_gated": t_gated,
            "regression_dense": t_dense,
            "decoding": t_decode,
        },
    }
    if args.table:
        print(f"{'stage':<24} {'MACs':>14} {'median s':>12}")
        rows = [
            ("classification (dense)", macs["classification_dense"], t_cls),
            ("patch extraction", macs["patch_extraction"], t_patch),
            ("regression (dense)", macs["regression_dense"], t_dense),
            ("regression (gated)", macs["regression_gated"], t_gated),
            ("decoding", macs["decoding"], t_decode),
        ]
        for name, m, t in rows:
            print(f"{name:<24} {m:>14d} {t:>12.6f}")
        print(f"equivalence: {payload['equivalence']}   head MAC ratio gated/dense: {ratio:.6f}")
    else:
        _print_json(payload)
    if not equivalent:
        print("gated and dense outputs differ", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


# --- match-demo ----------------------------------------------------------------


def _box3d_from_json(data) -> Box3D:
    center = np.asarray(data["center"], dtype=np.float64)
    dims = tuple(float(v) for v in data["dims"])
    if "yaw" in data:
        rotation = yaw_to_rotation(float(data["yaw"]))
    else:
        rotation = np.asarray(data["rotation"], dtype=np.float64).reshape(3, 3)
    return Box3D(center, dims, rotation)


def _box2d_from_json(data) -> Box2D:
    return Box2D(*(float(v) for v in data))


def _match_problem_from_json(data):
    anchors = np.asarray(data["anchors"], dtype=np.float64).reshape(-1, 2)
    gts = [
        GroundTruthObject(
            class_id=int(g["class_id"]),
            box2d=_box2d_from_json(g["box2d"]),
            box3d=_box3d_from_json(g["box3d"]),
        )
        for g in data["gts"]
    ]
    preds = [
        Prediction(
            class_probs=np.asarray(p["class_probs"], dtype=np.float64),
            box2d=_box2d_from_json(p["box2d"]),
            box3d=_box3d_from_json(p["box3d"]),
        )
        for p in data["predictions"]
    ]
    return gts, preds, anchors


def cmd_match_demo(args) -> int:
    config = _load_config(args)
    try:
        with open(args.input, encoding="utf-8") as fh:
            data = json.load(fh)
        gts, preds, anchors = _match_problem_from_json(data)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"bad match problem: {exc}") from None
    result = assign(gts, preds, anchors, config.match_config, args.mode)
    _print_json(
        {
            "mode": args.mode,
            "pairs": [[j, i, s] for j, i, s in result.pairs],
            "unmatched_gt": result.unmatched_gt,
        }
    )
    return EXIT_OK


# --- distill-loss ----------------------------------------------------------------


def cmd_distill_loss(args) -> int:
    config = _load_config(args)
    try:
        teacher = dataio.read_teacher_features(args.teacher)
        student = dataio.read_teacher_features(args.student)
    except (OSError, dataio.ContainerFormatError) as exc:
        raise InputError(str(exc)) from None
    t_by_key = {(e.image_index, e.instance_index): e for e in teacher}
    s_by_key = {(e.image_index, e.instance_index): e for e in student}
    keys = sorted(set(t_by_key) & set(s_by_key))
    pairs = [
        DistillPair(
            feat_teacher=t_by_key[k].feat,
            feat_student=s_by_key[k].feat,
            z_gt=s_by_key[k].z,  # student dumps carry the ground-truth depth
            z_teacher=t_by_key[k].z,
            image_index=k[0],
            instance_index=k[1],
        )
        for k in keys
    ]
    if not pairs:
        raise InputError("teacher and student dumps share no (image, instance) keys")
    if args.final_weights:
        try:
            tensors = dataio.load_tensors(args.final_weights)
            w_final = tensors[args.tensor].reshape(-1)
        except (OSError, dataio.ContainerFormatError) as exc:
            raise InputError(str(exc)) from None
        except KeyError:
            raise InputError(f"tensor {args.tensor!r} not found in {args.final_weights}") from None
        omega = importance_omega(w_final)
    else:
        omega = np.full(64, 1.0 / 64.0)
    etas = np.array(
        [quality_eta(p.z_gt, p.z_teacher, config.distill_epsilon, config.distill_eta_cap) for p in pairs]
    )
    loss, _grad = distill_loss(pairs, omega, etas)
    payload = {
        "loss": loss,
        "n_pairs": len(pairs),
        "n_unpaired": len(set(t_by_key) | set(s_by_key)) - len(keys),
    }
    if args.emit_components:
        om = omega.omega if hasattr(omega, "omega") else omega
        payload["etas"] = [float(e) for e in etas]
        payload["omega"] = [float(v) for v in om]
    _print_json(payload)
    return EXIT_OK


# --- mgiou ---------------------------------------------------------------------


def cmd_mgiou(args) -> int:
    from .mgiou import mgiou_3d, mgiou_clamped

    try:
        with open(args.boxes, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
    except OSError as exc:
        raise InputError(str(exc)) from None
    for idx, line in enumerate(lines):
        try:
            data = json.loads(line)
            a = _box3d_from_json(data["a"])
            b = _box3d_from_json(data["b"])
            check_rotation(a.rotation, tol=1e-6)
            check_rotation(b.rotation, tol=1e-6)
        except (ValueError, KeyError) as exc:
            raise InputError(f"pair {idx}: {exc}") from None
        value = mgiou_3d(a, b)
        _print_json({"index": idx, "mgiou": value, "mgiou_clamped": max(0.0, value)})
    return EXIT_OK


# --- synth -----------------------------------------------------------------------


def _scene_spec_from_json(data) -> synthetic.SceneSpec:
    kwargs = dict(data)
    if "intrinsics" in kwargs:
        kwargs["intrinsics"] = dataio.CameraIntrinsics(*kwargs["intrinsics"])
    if "noise" in kwargs:
        kwargs["noise"] = synthetic.NoiseSpec(**kwargs["noise"])
    for key in ("depth_range", "yaw_range", "image_size", "classes"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if "dim_ranges" in kwargs:
        kwargs["dim_ranges"] = {
            cls: tuple(tuple(r) for r in ranges) for cls, ranges in kwargs["dim_ranges"].items()
        }
    return synthetic.SceneSpec(**kwargs)


def cmd_synth(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            spec = _scene_spec_from_json(json.load(fh))
    except (OSError, ValueError, TypeError) as exc:
        raise InputError(f"bad scene spec: {exc}") from None
    os.makedirs(args.out_gt, exist_ok=True)
    if args.out_pred:
        os.makedirs(args.out_pred, exist_ok=True)
    class_names = list(spec.classes)
    for i in range(args.n_scenes):
        import dataclasses as _dc

        scene_spec = _dc.replace(spec, seed=spec.seed + i)
        gts, intrinsics = synthetic.generate_scene(scene_spec)
        name = f"{i:06d}.txt"
        dataio.write_kitti_label_file(
            os.path.join(args.out_gt, name),
            [dataio.ground_truth_to_kitti(gt, class_names) for gt in gts],
        )
        if args.out_pred:
            dets = synthetic.perturb(gts, spec.noise, scene_spec.seed, intrinsics)
            dataio.write_kitti_label_file(
                os.path.join(args.out_pred, name),
                [dataio.detection_to_kitti(d, class_names) for d in dets],
            )
    _print_json({"scenes": args.n_scenes, "gt_dir": args.out_gt, "pred_dir": args.out_pred})
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m3dkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (default: $M3DKIT_CONFIG or built-ins)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")

    p = sub.add_parser("eval", help="KITTI-protocol AP evaluation over label directories")
    add_common(p)
    p.add_argument("--gt", required=True, help="directory of ground-truth label files")
    p.add_argument("--pred", required=True, help="directory of prediction label files")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--pr-csv", help="write the PR curves as CSV here")
    p.add_argument("--jobs", type=int, default=1, help="parallel file-parsing workers")
    p.add_argument("--table", action="store_true", help="human table instead of JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gated-bench", help="dense vs gated inference benchmark + equivalence check")
    add_common(p)
    p.add_argument("--weights", required=True, help="head-set tensor container")
    p.add_argument("--shape", required=True, metavar="C,H8,W8", help="stride-8 map shape; stride-16 derived")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--table", action="store_true")
    p.set_defaults(func=cmd_gated_bench)

    p = sub.add_parser("match-demo", help="run the assigner on an explicit problem file")
    add_common(p)
    p.add_argument("--input", required=True, help="JSON problem: anchors, gts, predictions")
    p.add_argument("--mode", choices=["one_to_one", "one_to_many"], default="one_to_one")
    p.set_defaults(func=cmd_match_demo)

    p = sub.add_parser("distill-loss", help="weighted feature loss from teacher/student dumps")
    add_common(p)
    p.add_argument("--teacher", required=True, help="teacher feature container")
    p.add_argument("--student", required=True, help="student feature container (z = GT depth)")
    p.add_argument("--final-weights", help="container holding the depth head's final weights")
    p.add_argument("--tensor", default="depth/w1b", help="tensor name of the final weight vector")
    p.add_argument("--emit-components", action="store_true", help="include etas and omega in output")
    p.set_defaults(func=cmd_distill_loss)

    p = sub.add_parser("mgiou", help="MGIoU for JSON-lines box pairs")
    add_common(p)
    p.add_argument("--boxes", required=True, help='JSON lines: {"a": BOX, "b": BOX}')
    p.set_defaults(func=cmd_mgiou)

    p = sub.add_parser("synth", help="emit synthetic scenes as KITTI label files")
    add_common(p)
    p.add_argument("--spec", required=True, help="SceneSpec JSON file")
    p.add_argument("--out-gt", required=True)
    p.add_argument("--out-pred", help="also write perturbed predictions here")
    p.add_argument("--n-scenes", type=int, default=1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
