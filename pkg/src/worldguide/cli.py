"""Command-line front end; every subcommand wraps one library operation."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio, report
from .camera import plucker_map, unproject
from .depthalign import RansacConfig, apply_scale_shift, estimate_scale_shift
from .errors import WorldGuideError
from .evalmetrics import align_trajectories, compute_errors
from .humanalign import align_human_to_env, apply_transform
from .pipeline import PipelineConfig, run_pipeline
from .raster import RenderConfig, render_trajectory
from .trajgen import build_trajectory, follow_shot, resample_track, rotation_center

THREADS_ENV = "WORLDGUIDE_THREADS"


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _parse_vec3(text: str) -> np.ndarray:
    parts = [float(t) for t in text.replace(" ", "").split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated floats, got {text!r}")
    return np.asarray(parts)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument(
        "--threads", type=int, default=None,
        help=f"worker threads (default: ${THREADS_ENV} or 1)",
    )
    common.add_argument(
        "--bucket", default="auto",
        help="resolution bucket: 'auto', 'off', or WxH (pipeline only)",
    )

    parser = argparse.ArgumentParser(
        prog="worldguide",
        description="3D-consistent conditioning signals from a reference image's metric depth.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align-depth", parents=[common], help="fit metric scale/shift to depth")
    p.add_argument("--depth", required=True)
    p.add_argument("--corr", required=True, help="JSON list of {mono, metric, weight}")
    p.add_argument("--out", required=True, help="output metric depth (.pfm)")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--inlier-threshold", type=float, default=0.05)
    p.add_argument("--min-inlier-ratio", type=float, default=0.3)
    p.set_defaults(func=cmd_align_depth)

    p = sub.add_parser("unproject", parents=[common], help="lift depth to a point cloud")
    p.add_argument("--depth", required=True)
    p.add_argument("--cam", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output cloud (.ply)")
    p.set_defaults(func=cmd_unproject)

    p = sub.add_parser("make-traj", parents=[common], help="build a camera trajectory")
    p.add_argument("--spec", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--cam", required=True)
    p.add_argument("--fg", default=None, help="foreground mask PNG")
    p.add_argument("--out", required=True, help="output trajectory JSON")
    p.set_defaults(func=cmd_make_traj)

    p = sub.add_parser("align-human", parents=[common], help="align a character into the scene")
    p.add_argument("--kp2d", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--cam", required=True)
    p.add_argument("--kp-hum", required=True)
    p.add_argument("--seq", required=True, help="directory of per-frame PLY/OBJ + roots.json")
    p.add_argument("--g-env", type=_parse_vec3, default="0,1,0")
    p.add_argument("--g-hum", type=_parse_vec3, default="0,-1,0")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_align_human)

    p = sub.add_parser("render-traj", parents=[common], help="render the guidance video")
    p.add_argument("--cloud", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--ref", required=True, help="reference image PNG")
    p.add_argument("--frames", type=int, default=None, help="truncate/limit frame count")
    p.add_argument("--radius", type=int, default=1, help="splat radius in pixels")
    p.add_argument("--stream", action="store_true", help="also write packed guidance.wgv")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_render_traj)

    p = sub.add_parser("plucker", parents=[common], help="write per-frame ray maps")
    p.add_argument("--cam", required=True, help="camera/trajectory JSON")
    p.add_argument("--out", required=True, help="output directory (.npy per frame)")
    p.set_defaults(func=cmd_plucker)

    p = sub.add_parser("eval-traj", parents=[common], help="score trajectories (ATE/RPE/RRE)")
    p.add_argument("--est", required=True, help="estimated trajectory JSON (or directory)")
    p.add_argument("--gt", required=True, help="ground-truth trajectory JSON (or directory)")
    p.add_argument("--mode", choices=("se3", "sim3"), default="sim3")
    p.add_argument("--gap", type=int, default=1, help="frame gap for relative errors")
    p.add_argument("--no-normalize", action="store_true", help="report raw meters")
    p.add_argument("--report", default=None, help="output report JSON")
    p.add_argument("--csv", default=None, help="output delimited metrics table")
    p.add_argument("--plot", default=None, help="figure output (file, or directory in batch mode)")
    p.set_defaults(func=cmd_eval_traj)

    p = sub.add_parser("pipeline", parents=[common], help="run the full conditioning pipeline")
    p.add_argument("--ref", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--cam", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--corr", default=None)
    p.add_argument("--fg", default=None)
    p.add_argument("--kp2d", default=None)
    p.add_argument("--kp-hum", default=None)
    p.add_argument("--seq", default=None)
    p.add_argument("--hands", default=None)
    p.add_argument("--g-env", type=_parse_vec3, default="0,1,0")
    p.add_argument("--g-hum", type=_parse_vec3, default="0,-1,0")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--density", type=float, default=20000.0, help="surface points per square meter")
    p.add_argument("--stream", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def cmd_align_depth(args) -> dict:
    corr = fileio.load_correspondences(args.corr)
    cfg = RansacConfig(
        iterations=args.iterations,
        inlier_threshold_rel=args.inlier_threshold,
        min_inlier_ratio=args.min_inlier_ratio,
        rng_seed=args.seed,
    )
    fit = estimate_scale_shift(corr, cfg)
    depth = fileio.load_depth(args.depth)
    fileio.save_pfm(args.out, apply_scale_shift(depth, fit))
    return {"out": args.out, "a": fit.a, "b": fit.b, "inlier_ratio": fit.inlier_ratio}


def cmd_unproject(args) -> dict:
    depth = fileio.load_depth(args.depth)
    intr, poses = fileio.load_cameras(args.cam)
    image = fileio.load_png(args.image)
    cloud = unproject(depth, intr, poses[0], image)
    fileio.save_ply(args.out, cloud)
    return {"out": args.out, "points": len(cloud)}


def cmd_make_traj(args) -> dict:
    spec = fileio.load_trajectory_spec(args.spec)
    depth = fileio.load_depth(args.depth)
    intr, poses = fileio.load_cameras(args.cam)
    fg = fileio.load_mask_png(args.fg) if args.fg else None
    rc = rotation_center(depth, intr, poses[0], fg)
    traj = build_trajectory(spec, poses[0], rc, intr)
    if spec.follow:
        roots = resample_track(fileio.load_roots(spec.follow), traj.frame_count)
        traj = follow_shot(traj, roots)
    fileio.save_trajectory(args.out, traj)
    return {"out": args.out, "frames": traj.frame_count, "radius": rc.radius}


def cmd_align_human(args) -> dict:
    kp2d = fileio.load_keypoints2d(args.kp2d)
    depth = fileio.load_depth(args.depth)
    intr, poses = fileio.load_cameras(args.cam)
    kp_hum = fileio.load_keypoints3d(args.kp_hum)
    seq = fileio.load_character_sequence(args.seq)
    transform, seq_env = align_human_to_env(
        kp2d, depth, intr, poses[0], kp_hum, args.g_env, args.g_hum, seq
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "transform.json").write_text(
        json.dumps(
            {
                "scale": transform.scale,
                "rotation": [float(x) for x in transform.rotation.reshape(-1)],
                "translation": [float(x) for x in transform.translation],
            }
        )
    )
    fileio.save_roots(out / "roots.json", seq_env.roots)
    for i in range(seq_env.frame_count):
        fileio.save_obj(out / f"frame_{i:04d}.obj", seq_env.vertices[i], seq_env.faces)
    return {"out": str(out), "frames": seq_env.frame_count, "scale": transform.scale}


def cmd_render_traj(args) -> dict:
    cloud = fileio.load_ply_cloud(args.cloud)
    traj = fileio.load_trajectory(args.traj)
    if args.frames is not None:
        from .camera import Trajectory

        traj = Trajectory(intrinsics=traj.intrinsics, poses=traj.poses[: args.frames])
    ref = fileio.load_png(args.ref)
    cfg = RenderConfig(splat_radius_px=args.radius)
    video = render_trajectory(cloud, traj, ref, cfg, threads=args.threads)
    out = Path(args.out)
    fileio.save_guidance_video(out, video)
    if args.stream:
        fileio.save_guidance_stream(out / "guidance.wgv", [f.color for f in video.frames])
    return {"out": str(out), "frames": len(video.frames)}


def cmd_plucker(args) -> dict:
    traj = fileio.load_trajectory(args.cam)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, pose in enumerate(traj.poses):
        pm = plucker_map(traj.intrinsics, pose)
        np.save(out / f"frame_{i:03d}.npy", pm.channels.astype(np.float32))
    return {"out": str(out), "frames": traj.frame_count}


def cmd_eval_traj(args) -> dict:
    est_path, gt_path = Path(args.est), Path(args.gt)
    normalize = not args.no_normalize
    if est_path.is_dir() != gt_path.is_dir():
        raise WorldGuideError("--est and --gt must both be files or both be directories")

    if est_path.is_dir():
        names = sorted(
            {p.name for p in est_path.glob("*.json")} & {p.name for p in gt_path.glob("*.json")}
        )
        if not names:
            raise WorldGuideError(f"no matching *.json trajectory pairs in {est_path} / {gt_path}")
        rows = []
        for name in names:
            est = fileio.load_trajectory(est_path / name)
            gt = fileio.load_trajectory(gt_path / name)
            errs = compute_errors(est, gt, mode=args.mode, gap=args.gap, normalize=normalize)
            rows.append({"name": Path(name).stem, **errs.as_dict()})
            if args.plot:
                plot_dir = Path(args.plot)
                plot_dir.mkdir(parents=True, exist_ok=True)
                report.plot_trajectory_report(est, gt, errs, plot_dir / f"{Path(name).stem}.png")
        print(report.format_metrics_table(rows))
        doc = {"mode": args.mode, "cases": rows, "mean": report._mean_row(rows)}
        if args.report:
            Path(args.report).write_text(json.dumps(doc, indent=1))
        if args.csv:
            report.write_metrics_csv(args.csv, rows)
        return doc

    est = fileio.load_trajectory(est_path)
    gt = fileio.load_trajectory(gt_path)
    errs = compute_errors(est, gt, mode=args.mode, gap=args.gap, normalize=normalize)
    doc = errs.as_dict()
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=1))
    if args.csv:
        report.write_metrics_csv(args.csv, [{"name": est_path.stem, **doc}])
    if args.plot:
        report.plot_trajectory_report(est, gt, errs, args.plot)
    return doc


def cmd_pipeline(args) -> dict:
    cfg = PipelineConfig(
        reference_image=args.ref,
        depth=args.depth,
        cameras=args.cam,
        trajectory_spec=args.spec,
        out_dir=args.out,
        correspondences=args.corr,
        fg_mask=args.fg,
        keypoints2d=args.kp2d,
        keypoints_human=args.kp_hum,
        sequence_dir=args.seq,
        hand_sequence_dir=args.hands,
        g_env=tuple(args.g_env),
        g_hum=tuple(args.g_hum),
        seed=args.seed,
        threads=args.threads,
        frame_count=args.frames,
        bucket=args.bucket,
        splat_radius_px=args.radius,
        points_per_sq_meter=args.density,
        write_stream=args.stream,
    )
    manifest = run_pipeline(cfg)
    return {"out": args.out, "artifacts": len(manifest["artifacts"])}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None:
        args.threads = _default_threads()
    if isinstance(getattr(args, "g_env", None), str):
        args.g_env = _parse_vec3(args.g_env)
    if isinstance(getattr(args, "g_hum", None), str):
        args.g_hum = _parse_vec3(args.g_hum)
    try:
        result = args.func(args)
    except WorldGuideError as exc:
        payload = exc.as_dict() if hasattr(exc, "as_dict") else {
            "error": type(exc).__name__,
            "message": str(exc),
        }
        print(json.dumps(payload), file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
