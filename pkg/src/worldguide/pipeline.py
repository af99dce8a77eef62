"""End-to-end conditioning pipeline: depth alignment through rendered guidance.

Stage order: align-depth -> unproject -> rotation-center -> build-trajectory
-> align-human -> follow-shot -> render-scene -> render-character ->
render-hands -> plucker. Follow shooting runs after human alignment because
the camera offsets come from the aligned (environment-world) root track.

All randomness derives from the config seed: a root SeedSequence spawns one
child per randomized stage in a fixed order (0 = depth RANSAC, 1 = body
surface sampling, 2 = hand surface sampling), so a rerun with the same seed
reproduces every artifact byte for byte. The manifest lists each artifact
with its SHA-256 content hash to make that checkable without image tooling.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from . import fileio
from .camera import (
    CameraIntrinsics,
    DepthMap,
    PointCloud,
    Trajectory,
    pick_resolution_bucket,
    plucker_map,
    unproject,
)
from .depthalign import RansacConfig, apply_scale_shift, estimate_scale_shift
from .errors import PipelineStageError
from .humanalign import (
    DEFAULT_HUMAN_GRAVITY,
    CharacterSequence,
    SimilarityTransform,
    align_human_to_env,
    apply_transform,
)
from .raster import (
    RenderConfig,
    RenderFrame,
    apply_barycentric,
    effective_threads,
    occlusion_mask,
    render_frame,
    render_trajectory,
    sample_mesh_barycentric,
)
from .trajgen import build_trajectory, follow_shot, resample_track, rotation_center

CHARACTER_COLOR = (0.75, 0.75, 0.75)
HAND_COLOR = (0.9, 0.75, 0.6)


@dataclass
class PipelineConfig:
    """Inputs, outputs, and knobs for one pipeline run.

    Required inputs are the reference image, its (possibly unscaled) depth,
    the reference camera, and a trajectory spec. Human conditioning inputs
    (2D keypoints, human-space 3D keypoints, a character sequence, and
    optionally a hand sequence) are optional as a group.
    """

    reference_image: Path
    depth: Path
    cameras: Path
    trajectory_spec: Path
    out_dir: Path
    correspondences: Optional[Path] = None
    fg_mask: Optional[Path] = None
    keypoints2d: Optional[Path] = None
    keypoints_human: Optional[Path] = None
    sequence_dir: Optional[Path] = None
    hand_sequence_dir: Optional[Path] = None
    g_env: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    g_hum: Tuple[float, float, float] = tuple(DEFAULT_HUMAN_GRAVITY)
    seed: int = 0
    threads: int = 1
    frame_count: Optional[int] = None
    bucket: str = "auto"  # "auto", "off", or "WxH"
    splat_radius_px: int = 1
    tile_size: int = 64
    points_per_sq_meter: float = 20000.0
    occlusion_eps_m: float = 0.02
    write_stream: bool = False

    def __post_init__(self):
        for name in (
            "reference_image", "depth", "cameras", "trajectory_spec", "out_dir",
            "correspondences", "fg_mask", "keypoints2d", "keypoints_human",
            "sequence_dir", "hand_sequence_dir",
        ):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, Path(value))
        if self.frame_count is not None and self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")

    def validate(self) -> None:
        """Check that every referenced input path exists."""
        for name in (
            "reference_image", "depth", "cameras", "trajectory_spec",
            "correspondences", "fg_mask", "keypoints2d", "keypoints_human",
            "sequence_dir", "hand_sequence_dir",
        ):
            p = getattr(self, name)
            if p is not None and not p.exists():
                raise FileNotFoundError(f"{name}: {p} does not exist")

    @property
    def has_human(self) -> bool:
        return (
            self.keypoints2d is not None
            and self.keypoints_human is not None
            and self.sequence_dir is not None
        )


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_seeds(seed: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(3)
    return [int(c.generate_state(1)[0]) for c in children]


def _resize_inputs(
    image: np.ndarray, depth: DepthMap, intr: CameraIntrinsics, bucket: str
) -> Tuple[np.ndarray, DepthMap, CameraIntrinsics]:
    """Scale the reference view to its resolution bucket (or an explicit WxH)."""
    if bucket == "off":
        return image, depth, intr
    if bucket == "auto":
        w, h = pick_resolution_bucket(intr.width, intr.height)
    else:
        try:
            w, h = (int(t) for t in bucket.lower().split("x"))
        except ValueError as exc:
            raise ValueError(f"bucket must be 'auto', 'off', or 'WxH', got {bucket!r}") from exc
    if (w, h) == (intr.width, intr.height):
        return image, depth, intr
    img = np.asarray(
        Image.fromarray(image).resize((w, h), resample=Image.BILINEAR)
    )
    # Nearest-neighbor keeps depth metric and the validity mask crisp.
    vals = np.asarray(
        Image.fromarray(depth.values.astype(np.float32), mode="F").resize(
            (w, h), resample=Image.NEAREST
        ),
        dtype=np.float64,
    )
    valid = (
        np.asarray(
            Image.fromarray(depth.valid.astype(np.uint8) * 255, mode="L").resize(
                (w, h), resample=Image.NEAREST
            )
        )
        > 127
    )
    return img, DepthMap(np.where(valid, vals, 0.0), valid), intr.scaled(w, h)


class _Run:
    """Mutable state threaded through the pipeline stages."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.artifacts: List[Path] = []
        self.stages: List[str] = []
        self.seeds = _stage_seeds(cfg.seed)

    def track(self, path: Path) -> Path:
        self.artifacts.append(path)
        return path


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute the full conditioning pipeline; returns the manifest.

    Any stage failure writes <out_dir>/error.json naming the stage and
    raises PipelineStageError.
    """
    cfg.validate()
    run = _Run(cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    stage = "load-inputs"
    try:
        image = fileio.load_png(cfg.reference_image)
        depth = fileio.load_depth(cfg.depth)
        intr, poses = fileio.load_cameras(cfg.cameras)
        ref_pose = poses[0]
        spec = fileio.load_trajectory_spec(cfg.trajectory_spec)
        if image.shape[:2] != (intr.height, intr.width):
            raise ValueError(
                f"reference image {image.shape[:2]} does not match camera "
                f"{intr.height}x{intr.width}"
            )
        if depth.shape != image.shape[:2]:
            raise ValueError(f"depth {depth.shape} does not match image {image.shape[:2]}")
        image, depth, intr = _resize_inputs(image, depth, intr, cfg.bucket)
        frame_count = cfg.frame_count if cfg.frame_count is not None else spec.frame_count
        run.stages.append(stage)

        stage = "align-depth"
        if cfg.correspondences is not None:
            corr = fileio.load_correspondences(cfg.correspondences)
            fit = estimate_scale_shift(corr, RansacConfig(rng_seed=run.seeds[0]))
            depth = apply_scale_shift(depth, fit)
            fileio.save_pfm(run.track(run.out / "metric_depth.pfm"), depth)
            (run.out / "scale_shift.json").write_text(
                json.dumps({"a": fit.a, "b": fit.b, "inlier_ratio": fit.inlier_ratio})
            )
            run.track(run.out / "scale_shift.json")
            run.stages.append(stage)

        stage = "unproject"
        scene = unproject(depth, intr, ref_pose, image)
        fileio.save_ply(run.track(run.out / "scene.ply"), scene)
        run.stages.append(stage)

        stage = "rotation-center"
        fg = fileio.load_mask_png(cfg.fg_mask) if cfg.fg_mask is not None else None
        rc = rotation_center(depth, intr, ref_pose, fg)
        (run.out / "rotation_center.json").write_text(
            json.dumps({"radius": rc.radius, "center": list(map(float, rc.center))})
        )
        run.track(run.out / "rotation_center.json")
        run.stages.append(stage)

        stage = "build-trajectory"
        traj = build_trajectory(replace(spec, frame_count=frame_count), ref_pose, rc, intr)
        run.stages.append(stage)

        stage = "align-human"
        transform: Optional[SimilarityTransform] = None
        seq_env: Optional[CharacterSequence] = None
        hand_env: Optional[CharacterSequence] = None
        if cfg.has_human:
            kp2d = fileio.load_keypoints2d(cfg.keypoints2d)
            kp_hum = fileio.load_keypoints3d(cfg.keypoints_human)
            seq = fileio.load_character_sequence(cfg.sequence_dir)
            transform, seq_env = align_human_to_env(
                kp2d, depth, intr, ref_pose, kp_hum,
                np.asarray(cfg.g_env, dtype=np.float64),
                np.asarray(cfg.g_hum, dtype=np.float64),
                seq,
            )
            if cfg.hand_sequence_dir is not None:
                hand = fileio.load_character_sequence(cfg.hand_sequence_dir)
                hand_env = apply_transform(hand, transform)
            (run.out / "human_transform.json").write_text(
                json.dumps(
                    {
                        "scale": transform.scale,
                        "rotation": [float(x) for x in transform.rotation.reshape(-1)],
                        "translation": [float(x) for x in transform.translation],
                    }
                )
            )
            run.track(run.out / "human_transform.json")
            fileio.save_roots(run.track(run.out / "aligned_roots.json"), seq_env.roots)
            run.stages.append(stage)

        stage = "follow-shot"
        follow_roots: Optional[np.ndarray] = None
        if seq_env is not None and spec.follow is not None:
            follow_roots = seq_env.roots
        elif spec.follow is not None:
            follow_roots = fileio.load_roots(Path(spec.follow))
        if follow_roots is not None:
            traj = follow_shot(traj, resample_track(follow_roots, traj.frame_count))
            run.stages.append(stage)
        fileio.save_trajectory(run.track(run.out / "trajectory.json"), traj)

        stage = "render-scene"
        rcfg = RenderConfig(splat_radius_px=cfg.splat_radius_px, tile_size=cfg.tile_size)
        video = render_trajectory(scene, traj, image, rcfg, threads=cfg.threads)
        for p in fileio.save_guidance_video(run.out / "guidance", video):
            run.track(p)
        if cfg.write_stream:
            fileio.save_guidance_stream(
                run.track(run.out / "guidance.wgv"), [f.color for f in video.frames]
            )
        run.stages.append(stage)

        body_frames: Optional[List[RenderFrame]] = None
        stage = "render-character"
        if seq_env is not None:
            body_frames = _render_character(
                run, "character", seq_env, traj, rcfg, run.seeds[1], CHARACTER_COLOR
            )
            run.stages.append(stage)

        stage = "render-hands"
        if hand_env is not None:
            hand_frames = _render_character(
                run, "hands", hand_env, traj, rcfg, run.seeds[2], HAND_COLOR
            )
            occl_dir = run.out / "hands"
            for i, (hand_f, body_f) in enumerate(zip(hand_frames, body_frames)):
                hidden = occlusion_mask(hand_f, body_f, cfg.occlusion_eps_m)
                fileio.save_mask_png(run.track(occl_dir / f"occlusion_{i:03d}.png"), hidden)
            run.stages.append(stage)

        stage = "plucker"
        pl_dir = run.out / "plucker"
        pl_dir.mkdir(parents=True, exist_ok=True)
        for i, pose in enumerate(traj.poses):
            pm = plucker_map(intr, pose)
            np.save(run.track(pl_dir / f"frame_{i:03d}.npy"), pm.channels.astype(np.float32))
        run.stages.append(stage)

        stage = "manifest"
        manifest = {
            "seed": cfg.seed,
            "frame_count": traj.frame_count,
            "stages": run.stages,
            "artifacts": sorted(
                (
                    {
                        "path": str(p.relative_to(run.out)),
                        "sha256": _sha256(p),
                        "bytes": p.stat().st_size,
                    }
                    for p in run.artifacts
                ),
                key=lambda a: a["path"],
            ),
        }
        (run.out / "manifest.json").write_text(json.dumps(manifest, indent=1))
        return manifest
    except Exception as exc:  # noqa: BLE001 - every stage error becomes a report
        err = PipelineStageError(stage, exc)
        try:
            (run.out / "error.json").write_text(json.dumps(err.as_dict()))
        except OSError:
            pass
        raise err from exc


def _render_character(
    run: _Run,
    name: str,
    seq: CharacterSequence,
    traj: Trajectory,
    rcfg: RenderConfig,
    seed: int,
    color: Tuple[float, float, float],
) -> List[RenderFrame]:
    """Per-frame character renders; surface samples track the mesh across frames."""
    cfg = run.cfg
    out_dir = run.out / name
    out_dir.mkdir(parents=True, exist_ok=True)
    seq = seq.resampled(traj.frame_count)
    if seq.faces is not None:
        face_idx, bary = sample_mesh_barycentric(
            seq.vertices[0], seq.faces, cfg.points_per_sq_meter, seed=seed
        )
    else:
        face_idx = None

    def cloud_for(i: int) -> PointCloud:
        if face_idx is not None and len(face_idx):
            pos = apply_barycentric(seq.vertices[i], seq.faces, face_idx, bary)
        else:
            pos = seq.vertices[i]
        return PointCloud(positions=pos, colors=np.tile(color, (len(pos), 1)))

    h, w = traj.intrinsics.height, traj.intrinsics.width
    n = traj.frame_count
    depth_stack = np.zeros((n, h, w))
    mask_stack = np.zeros((n, h, w), dtype=bool)

    def one(i: int) -> None:
        # color is written out immediately; only depth/mask stay resident
        # (they feed the occlusion stage)
        f = render_frame(cloud_for(i), traj.intrinsics, traj.poses[i], rcfg)
        fileio.save_png(out_dir / f"color_{i:03d}.png", f.color)
        fileio.save_mask_png(out_dir / f"mask_{i:03d}.png", f.mask)
        depth_stack[i] = f.depth
        mask_stack[i] = f.mask

    threads = effective_threads(cfg.threads)
    if threads <= 1:
        for i in range(n):
            one(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(n)))
    frames = []
    blank = np.zeros((h, w, 3))  # shared placeholder; colors live on disk
    for i in range(n):
        run.track(out_dir / f"color_{i:03d}.png")
        run.track(out_dir / f"mask_{i:03d}.png")
        frames.append(RenderFrame(color=blank, depth=depth_stack[i], mask=mask_stack[i]))
    return frames
