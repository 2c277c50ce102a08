"""Command-line harness.

Subcommands:
  render        write a synthetic scene's heatmap bundle as SPLG grids
  decode        decode a bundle (optionally multi-scale) to results JSON
  eval          score results JSON against a scene JSON
  mimic-train   run the two-stage mimicking schedule from a config file
  mimic-losses  forward-only mimic losses on SPLG inputs (for bindings)
  bench         ns/op timings for pooling and decode

Results JSON is a list of person objects in input-pixel coordinates:
  {"bbox": [x1,y1,x2,y2], "score": s, "keypoints": [x1,y1,v1, ..., xK,yK,vK]}
with v=2 for present keypoints and v=0 (with zeroed coordinates) otherwise.

Config files are flat "key = value" text, UTF-8, with "#" comments.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import mimic
from .decode import (
    DecodeConfig,
    HeatmapBundle,
    decode_poses,
    multi_scale_fuse,
    pose_to_image_coords,
)
from .diffops import ConvLayer, read_checkpoint, write_checkpoint
from .grid import Box, Grid, read_grid, write_grid
from .metrics import EvalReport, det_pr, pck
from .pointops import PoolKind, cascade_corner_pool, center_pool
from .scene import (
    Scene,
    gen_scene,
    render_scene,
    scene_from_json,
    scene_to_json,
)

BUNDLE_FILES = ("pose", "center", "top_left", "bottom_right")


def parse_config(text: str) -> dict[str, str]:
    """Parse flat "key = value" config text; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _scale_dir(out_dir: Path, scale: float) -> Path:
    return out_dir / f"scale_{scale:g}"


def _write_bundle(bundle: HeatmapBundle, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name in BUNDLE_FILES:
        write_grid(getattr(bundle, name), directory / f"{name}.splg")


def _read_bundle(directory: Path, stride: int) -> HeatmapBundle:
    grids = {name: read_grid(directory / f"{name}.splg") for name in BUNDLE_FILES}
    return HeatmapBundle(stride=stride, **grids)


def _scaled_scene(scene: Scene, scale: float) -> Scene:
    if scale == 1.0:
        return scene
    from dataclasses import replace

    from .scene import SceneKeypoint, ScenePerson

    persons = [
        ScenePerson(
            box=Box(
                p.box.x1 * scale, p.box.y1 * scale,
                p.box.x2 * scale, p.box.y2 * scale,
            ),
            keypoints=[
                SceneKeypoint(kp.x * scale, kp.y * scale, kp.visible)
                for kp in p.keypoints
            ],
        )
        for p in scene.persons
    ]
    return replace(
        scene,
        width=int(round(scene.width * scale)),
        height=int(round(scene.height * scale)),
        persons=persons,
    )


def cmd_render(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = gen_scene(
        n_persons=args.persons, overlap_level=args.overlap, size=args.size,
        k=args.joints, seed=args.seed,
    )
    scales = _parse_scales(args.scales)
    for i, scale in enumerate(scales):
        bundle = render_scene(
            _scaled_scene(scene, scale),
            stride=args.stride, sigma=args.sigma, noise=args.noise,
            noise_seed=scene.seed + 7919 * i,
        )
        target = out_dir if scales == [1.0] else _scale_dir(out_dir, scale)
        _write_bundle(bundle, target)
    (out_dir / "scene.json").write_text(scene_to_json(scene) + "\n")
    (out_dir / "meta.json").write_text(
        json.dumps({"stride": args.stride, "scales": scales}) + "\n"
    )
    return 0


def _parse_scales(text: str | None) -> list[float]:
    if not text:
        return [1.0]
    return [float(s) for s in text.split(",") if s.strip()]


def results_json(poses, stride: int) -> bytes:
    """Serialize decoded poses to the results JSON wire format."""
    persons = []
    for pose in poses:
        img = pose_to_image_coords(pose, stride)
        triplets: list[float] = []
        for kp in img.keypoints:
            if kp.present:
                triplets.extend([kp.x, kp.y, 2])
            else:
                triplets.extend([0.0, 0.0, 0])
        persons.append(
            {
                "bbox": [img.box.x1, img.box.y1, img.box.x2, img.box.y2],
                "score": img.box.score,
                "keypoints": triplets,
            }
        )
    return json.dumps(persons, separators=(",", ":")).encode("utf-8")


def decode_bundle_dir(
    bundle_dir: Path,
    cfg: DecodeConfig,
    scales: list[float] | None = None,
    stride: int | None = None,
) -> bytes:
    """Shared decode path for the CLI and the bindings: dir -> JSON bytes."""
    meta_path = bundle_dir / "meta.json"
    if stride is None:
        if meta_path.exists():
            stride = int(json.loads(meta_path.read_text())["stride"])
        else:
            stride = 4
    if scales:
        bundles = [
            (_read_bundle(_scale_dir(bundle_dir, s), stride), s) for s in scales
        ]
        bundle = multi_scale_fuse(bundles)
    else:
        bundle = _read_bundle(bundle_dir, stride)
    poses = decode_poses(bundle, cfg)
    return results_json(poses, bundle.stride)


def cmd_decode(args) -> int:
    cfg = DecodeConfig(
        phi_det=args.phi_det, phi_pose=args.phi_pose, top_n=args.top_n,
        central_fraction=args.central_fraction, max_boxes=args.max_boxes,
        subpixel=not args.no_subpixel,
    )
    scales = _parse_scales(args.scales) if args.scales else None
    payload = decode_bundle_dir(
        Path(args.bundle), cfg, scales=scales, stride=args.stride
    )
    Path(args.out).write_bytes(payload)
    return 0


def cmd_eval(args) -> int:
    from .decode import PersonPose, PoseKeypoint

    scene = scene_from_json(Path(args.scene).read_text())
    persons = json.loads(Path(args.pred).read_text())
    preds = []
    for p in persons:
        x1, y1, x2, y2 = p["bbox"]
        kps = []
        trip = p["keypoints"]
        for i in range(0, len(trip), 3):
            x, y, v = trip[i], trip[i + 1], trip[i + 2]
            kps.append(PoseKeypoint(x=x, y=y, score=1.0, present=v > 0))
        preds.append(PersonPose(box=Box(x1, y1, x2, y2, p["score"]), keypoints=kps))

    value = pck(preds, scene, tau=args.pck_tau)
    precision, recall = det_pr(
        [p.box for p in preds], [p.box for p in scene.persons], args.iou_tau
    )
    report = EvalReport(
        pck=value, det_precision=precision, det_recall=recall,
        pck_tau=args.pck_tau, iou_tau=args.iou_tau,
        per_scene=[{
            "seed": scene.seed,
            "persons": len(scene.persons),
            "pck": value,
            "det_precision": precision,
            "det_recall": recall,
        }],
    )
    text = json.dumps(report.to_dict(), separators=(",", ":"))
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


_MIMIC_INT_KEYS = {
    "teacher_res", "stage2_start", "steps", "seed", "scene_count",
    "persons", "size", "stride", "num_joints",
}
_MIMIC_FLOAT_KEYS = {
    "alpha", "beta", "lr", "sigma", "student_noise", "teacher_noise",
}


def mimic_config_from_text(text: str) -> mimic.MimicConfig:
    values = parse_config(text)
    kwargs = {}
    for key, raw in values.items():
        if key in _MIMIC_INT_KEYS:
            kwargs[key] = int(raw)
        elif key in _MIMIC_FLOAT_KEYS:
            kwargs[key] = float(raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return mimic.MimicConfig(**kwargs)


def cmd_mimic_train(args) -> int:
    cfg = mimic_config_from_text(Path(args.config).read_text())
    report = mimic.run_mimic_schedule(cfg)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.csv").write_text(report.to_csv())
    write_checkpoint(run_dir / "checkpoint.splgc", report.params)
    print(f"wrote {run_dir / 'report.csv'} ({len(report.rows)} steps)")
    return 0


def mimic_losses_from_files(
    student_path, gt_path, pred_path, adapters_path=None
) -> tuple[float, float]:
    student = read_grid(student_path)
    gt = read_grid(gt_path)
    pred = read_grid(pred_path)
    k = student.channels
    if adapters_path is not None:
        sections = read_checkpoint(adapters_path)
        a1 = _adapter_from_sections(sections, "adapter1", k)
        a2 = _adapter_from_sections(sections, "adapter2", k)
    else:
        a1 = ConvLayer.identity(3, k)
        a2 = ConvLayer.identity(3, k)
    teacher = mimic.TeacherBundle(
        gt=gt, pred=pred,
        person_box=Box(0.0, 0.0, float(student.width), float(student.height)),
    )
    return mimic.mimic_losses(student, teacher, a1, a2)


def _adapter_from_sections(sections: dict, prefix: str, k: int) -> ConvLayer:
    kernel = sections[f"{prefix}.kernel"]
    bias = sections[f"{prefix}.bias"]
    ksize = kernel.shape[0]
    return ConvLayer(
        kernel=kernel.astype(np.float64).reshape(ksize, ksize, k, k),
        bias=bias.astype(np.float64).reshape(-1),
    )


def cmd_mimic_losses(args) -> int:
    l_m1, l_m2 = mimic_losses_from_files(
        args.student, args.teacher_gt, args.teacher_pred, args.adapters
    )
    print(json.dumps({"l_m1": l_m1, "l_m2": l_m2}, separators=(",", ":")))
    return 0


def bench_rows(sizes: list[int], iters: int, seed: int = 0) -> list[tuple[str, int, float]]:
    """Median ns/op for the pooling kernels and full decode, per grid side."""
    rows = []
    rng = np.random.default_rng(seed)
    for size in sizes:
        g = Grid(rng.random((size, size, 1), dtype=np.float32))
        for name, fn in (
            ("center_pool", lambda: center_pool(g)),
            ("cascade_top_left", lambda: cascade_corner_pool(g, PoolKind.CASCADE_TOP_LEFT)),
            ("cascade_bottom_right", lambda: cascade_corner_pool(g, PoolKind.CASCADE_BOTTOM_RIGHT)),
        ):
            rows.append((name, size, _time_ns(fn, iters)))
        scene = gen_scene(n_persons=3, overlap_level=0.05, size=size * 4, seed=seed)
        bundle = render_scene(scene, stride=4)
        cfg = DecodeConfig()
        rows.append(("decode", size, _time_ns(lambda: decode_poses(bundle, cfg), max(1, iters // 10))))
    return rows


def _time_ns(fn, iters: int) -> float:
    fn()  # warm-up
    samples = []
    for _ in range(max(1, iters)):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    # best-of is the usual low-noise estimator for short kernels
    return float(min(samples))


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows = bench_rows(sizes, args.iters)
    print("op,size,ns_per_op")
    for name, size, ns in rows:
        print(f"{name},{size},{ns:.0f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointpose")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a synthetic scene to SPLG grids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--persons", type=int, default=3)
    p.add_argument("--overlap", type=float, default=0.05)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--joints", type=int, default=17)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--scales", type=str, default=None,
                   help="comma-separated scales; writes scale_<s>/ subdirs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("decode", help="decode a bundle directory to results JSON")
    p.add_argument("--bundle", required=True)
    p.add_argument("--phi-det", dest="phi_det", type=float, default=0.1)
    p.add_argument("--phi-pose", dest="phi_pose", type=float, default=0.2)
    p.add_argument("--top-n", dest="top_n", type=int, default=32)
    p.add_argument("--central-fraction", dest="central_fraction",
                   type=float, default=1.0 / 3.0)
    p.add_argument("--max-boxes", dest="max_boxes", type=int, default=32)
    p.add_argument("--no-subpixel", action="store_true")
    p.add_argument("--scales", type=str, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score results JSON against a scene")
    p.add_argument("--pred", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--pck-tau", dest="pck_tau", type=float, default=0.1)
    p.add_argument("--iou-tau", dest="iou_tau", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mimic-train", help="run the two-stage schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mimic_train)

    p = sub.add_parser("mimic-losses",
                       help="forward-only mimic losses on SPLG crops")
    p.add_argument("--student", required=True)
    p.add_argument("--teacher-gt", dest="teacher_gt", required=True)
    p.add_argument("--teacher-pred", dest="teacher_pred", required=True)
    p.add_argument("--adapters", default=None,
                   help="checkpoint container with adapter sections")
    p.set_defaults(func=cmd_mimic_losses)

    p = sub.add_parser("bench", help="ns/op for pooling and decode")
    p.add_argument("--sizes", type=str, default="64,128,256")
    p.add_argument("--iters", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
