"""Software point-splat rasterizer for guidance videos.

Each visible point stamps a square splat (Chebyshev radius in pixels)
around its rounded pixel; a per-pixel z-buffer keeps the nearest point,
with exact depth ties going to the lowest point index. Uncovered pixels
stay black with mask=False. Output is a deterministic function of the
inputs regardless of thread count: tiles and frames are data-independent
work units.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .camera import CameraIntrinsics, CameraPose, PointCloud, Trajectory
from .errors import DimensionMismatch


def effective_threads(threads: int) -> int:
    """Worker count clamped to the machine; oversubscription only adds contention."""
    return max(1, min(threads, os.cpu_count() or 1))


@dataclass(frozen=True)
class RenderConfig:
    """Rasterizer settings.

    splat_radius_px: Chebyshev splat radius; 0 = single pixel per point.
    tile_size: Side length of the square tiles used for parallel rendering.
    allow_reference_resolution_mismatch: Accept a reference image whose
        resolution differs from the render resolution; frame 0 then carries
        the reference verbatim with an empty depth/mask (high-resolution
        first-frame conditioning).
    """

    splat_radius_px: int = 1
    tile_size: int = 64
    allow_reference_resolution_mismatch: bool = False

    def __post_init__(self):
        if self.splat_radius_px < 0:
            raise ValueError("splat radius must be >= 0")
        if self.tile_size < 1:
            raise ValueError("tile size must be >= 1")


@dataclass(frozen=True)
class RenderFrame:
    """One rendered view: color (h,w,3) in [0,1], metric depth, coverage mask."""

    color: np.ndarray
    depth: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True)
class GuidanceVideo:
    """Point-cloud renders along a trajectory; frame 0 is the reference image."""

    frames: Tuple[RenderFrame, ...]
    reference_frame_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self) -> int:
        return len(self.frames)


class _Workspace:
    """Per-render scratch buffers, reused across the frames of one call.

    Sized for a fixed (point count, resolution, splat/tile geometry); the
    splat list capacity covers the worst case of every point touching
    every tile its splat can overlap.
    """

    def __init__(self, n_points: int, intr: CameraIntrinsics, cfg: RenderConfig):
        h, w = intr.height, intr.width
        tile = cfg.tile_size
        self.ntx = (w + tile - 1) // tile
        self.nty = (h + tile - 1) // tile
        self.ntiles = self.ntx * self.nty
        per_point = (2 * cfg.splat_radius_px // tile + 2) ** 2
        self.rel = np.empty((n_points, 3))
        self.cam = np.empty((n_points, 3))
        self.px = np.empty(n_points, dtype=np.int64)
        self.py = np.empty(n_points, dtype=np.int64)
        self.z = np.empty(n_points)
        self.vis = np.empty(n_points, dtype=np.bool_)
        self.offsets = np.empty(self.ntiles + 1, dtype=np.int64)
        self.plist = np.empty(max(n_points * per_point, 1), dtype=np.int64)
        self.zbuf = np.empty(h * w)
        self.win = np.empty(h * w, dtype=np.int64)


def _render_into(
    cloud: PointCloud,
    intr: CameraIntrinsics,
    pose: CameraPose,
    cfg: RenderConfig,
    threads: int,
    color_out: np.ndarray,
    depth_out: np.ndarray,
    mask_out: np.ndarray,
    ws: Optional[_Workspace] = None,
) -> None:
    """Rasterize into pre-zeroed (h, w[, 3]) C-contiguous output buffers."""
    h, w = intr.height, intr.width
    if ws is None:
        ws = _Workspace(len(cloud), intr, cfg)
    # Same camera-frame coordinates as camera.project; the compiled kernel
    # finishes the projection with identical scalar operations.
    np.subtract(cloud.positions, pose.center, out=ws.rel)
    np.dot(ws.rel, pose.rotation, out=ws.cam)

    tile = cfg.tile_size
    _kernels.project_bin_points(
        ws.cam, intr.fx, intr.fy, intr.cx, intr.cy,
        cfg.splat_radius_px, tile, ws.ntx, ws.nty, w, h,
        ws.px, ws.py, ws.z, ws.vis, ws.offsets, ws.plist,
    )

    ws.zbuf.fill(np.inf)
    ws.win.fill(-1)
    threads = effective_threads(threads)
    if threads <= 1 or ws.ntiles == 1:
        _kernels.raster_tiles(
            0, ws.ntiles, ws.offsets, ws.plist, ws.px, ws.py, ws.z,
            cfg.splat_radius_px, tile, ws.ntx, w, h, ws.zbuf, ws.win,
        )
    else:
        bounds = np.linspace(0, ws.ntiles, min(threads, ws.ntiles) + 1).astype(np.int64)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(
                    _kernels.raster_tiles,
                    int(lo), int(hi), ws.offsets, ws.plist, ws.px, ws.py, ws.z,
                    cfg.splat_radius_px, tile, ws.ntx, w, h, ws.zbuf, ws.win,
                )
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futures:
                f.result()

    _kernels.compose_output(
        ws.zbuf, ws.win, cloud.colors,
        color_out.reshape(-1, 3), depth_out.reshape(-1), mask_out.reshape(-1),
    )


def render_frame(
    cloud: PointCloud,
    intr: CameraIntrinsics,
    pose: CameraPose,
    cfg: RenderConfig = RenderConfig(),
    threads: int = 1,
) -> RenderFrame:
    """Rasterize a point cloud into one view.

    Args:
        cloud: Non-empty world-space point cloud.
        intr: Target view intrinsics (set the output resolution).
        pose: Target camera-to-world pose.
        cfg: Splat radius and tiling parameters.
        threads: Worker threads for tile rendering; any value yields
            bit-identical output.

    Returns:
        RenderFrame where masked pixels carry the winning point's color and
        camera-frame depth; unmasked pixels are black with depth 0.
    """
    if len(cloud) == 0:
        raise ValueError("cannot render an empty point cloud")
    h, w = intr.height, intr.width
    color = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    _render_into(cloud, intr, pose, cfg, threads, color, depth, mask)
    return RenderFrame(color=color, depth=depth, mask=mask)


def render_frame_reference(
    cloud: PointCloud,
    intr: CameraIntrinsics,
    pose: CameraPose,
    reference_image: np.ndarray,
    cfg: RenderConfig = RenderConfig(),
) -> RenderFrame:
    """Frame-0 render: depth/mask from rasterization, color = reference image."""
    ref = _as_float_image(reference_image)
    if ref.shape[:2] == (intr.height, intr.width):
        rendered = render_frame(cloud, intr, pose, cfg)
        return RenderFrame(color=ref, depth=rendered.depth, mask=rendered.mask)
    if not cfg.allow_reference_resolution_mismatch:
        raise DimensionMismatch(
            f"reference image {ref.shape[:2]} != render size {(intr.height, intr.width)}"
        )
    rh, rw = ref.shape[:2]
    return RenderFrame(color=ref, depth=np.zeros((rh, rw)), mask=np.zeros((rh, rw), bool))


def render_trajectory(
    cloud: PointCloud,
    traj: Trajectory,
    reference_image: np.ndarray,
    cfg: RenderConfig = RenderConfig(),
    threads: int = 1,
) -> GuidanceVideo:
    """Render the guidance video along a trajectory.

    Frame 0 carries the reference image verbatim; frames 1..N-1 are plain
    renders. Frames are rendered in parallel when threads > 1 (each frame
    single-threaded internally), with schedule-independent output.

    Frame storage is preallocated as one block per field and frames are
    views into it: retaining dozens of full-resolution frames as separate
    allocations interleaves with the per-frame temporaries and fragments
    the heap badly enough to dominate the render time.
    """
    intr = traj.intrinsics
    n = traj.frame_count
    h, w = intr.height, intr.width
    color_stack = np.zeros((n, h, w, 3))
    depth_stack = np.zeros((n, h, w))
    mask_stack = np.zeros((n, h, w), dtype=bool)
    frame0_special: Optional[RenderFrame] = None
    workspaces = _threadlocal_workspaces(len(cloud), intr, cfg)

    def one(i: int) -> None:
        nonlocal frame0_special
        if i == 0:
            f = render_frame_reference(cloud, intr, traj.poses[0], reference_image, cfg)
            if f.shape != (h, w):  # high-resolution reference carve-out
                frame0_special = f
                return
            color_stack[0] = f.color
            depth_stack[0] = f.depth
            mask_stack[0] = f.mask
            return
        _render_into(
            cloud, intr, traj.poses[i], cfg, 1,
            color_stack[i], depth_stack[i], mask_stack[i],
            ws=workspaces(),
        )

    threads = effective_threads(threads)
    if threads <= 1 or n == 1:
        for i in range(n):
            one(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(n)))
    frames = [
        RenderFrame(color=color_stack[i], depth=depth_stack[i], mask=mask_stack[i])
        for i in range(n)
    ]
    if frame0_special is not None:
        frames[0] = frame0_special
    return GuidanceVideo(frames=tuple(frames))


def _threadlocal_workspaces(n_points: int, intr: CameraIntrinsics, cfg: RenderConfig):
    """One lazily built scratch workspace per worker thread."""
    import threading

    local = threading.local()

    def get() -> _Workspace:
        ws = getattr(local, "ws", None)
        if ws is None:
            ws = _Workspace(n_points, intr, cfg)
            local.ws = ws
        return ws

    return get


def occlusion_mask(front: RenderFrame, back: RenderFrame, eps_m: float) -> np.ndarray:
    """Pixels where `front` is hidden behind `back` by more than eps_m meters.

    front is typically the hand render and back the body render; a masked
    pixel means the hand is occluded there.
    """
    if front.shape != back.shape:
        raise DimensionMismatch(f"front {front.shape} != back {back.shape}")
    return front.mask & back.mask & (front.depth > back.depth + eps_m)


def _as_float_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {img.shape}")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def sample_mesh_barycentric(
    vertices: np.ndarray,
    faces: np.ndarray,
    points_per_sq_meter: float,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Draw area-weighted surface sample coordinates (face index, barycentric).

    The expected sample count is total_area * points_per_sq_meter. Returns
    (face_idx (n,), bary (n, 3)); reusable across frames of a deforming mesh
    with fixed topology so the sampled surface points track the surface.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise ValueError("face indices out of range")
    if len(faces) == 0 or points_per_sq_meter <= 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 3))
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = areas.sum()
    if total <= 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 3))
    n = int(round(total * points_per_sq_meter))
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty((0, 3))
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, areas / total)
    face_idx = np.repeat(np.arange(len(faces), dtype=np.int64), counts)
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1 = np.where(flip, 1.0 - r1, r1)
    r2 = np.where(flip, 1.0 - r2, r2)
    bary = np.stack([1.0 - r1 - r2, r1, r2], axis=1)
    return face_idx, bary


def apply_barycentric(
    vertices: np.ndarray, faces: np.ndarray, face_idx: np.ndarray, bary: np.ndarray
) -> np.ndarray:
    """Evaluate barycentric surface samples on a vertex array."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tri = vertices[np.asarray(faces, dtype=np.int64)[face_idx]]  # (n, 3, 3)
    return np.einsum("nk,nkd->nd", bary, tri)


def sample_mesh_surface(
    vertices: np.ndarray,
    faces: np.ndarray,
    points_per_sq_meter: float,
    seed: int = 0,
    vertex_colors: Optional[np.ndarray] = None,
    color: Sequence[float] = (0.8, 0.8, 0.8),
) -> PointCloud:
    """Densify a triangle mesh into a point cloud by uniform surface sampling.

    Expected point count is total_area * points_per_sq_meter, deterministic
    under the seed. Zero density or a degenerate (zero-area / faceless)
    mesh returns the vertices as-is.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    face_idx, bary = sample_mesh_barycentric(vertices, faces, points_per_sq_meter, seed)
    if len(face_idx) == 0:
        cols = _point_colors(len(vertices), vertex_colors, color)
        return PointCloud(positions=vertices, colors=cols)
    positions = apply_barycentric(vertices, faces, face_idx, bary)
    if vertex_colors is not None:
        vc = np.asarray(vertex_colors, dtype=np.float64).reshape(-1, 3)
        tri_cols = vc[np.asarray(faces, dtype=np.int64)[face_idx]]
        cols = np.einsum("nk,nkd->nd", bary, tri_cols)
    else:
        cols = np.tile(np.asarray(color, dtype=np.float64), (len(positions), 1))
    return PointCloud(positions=positions, colors=np.clip(cols, 0.0, 1.0))


def _point_colors(n: int, vertex_colors, color) -> np.ndarray:
    if vertex_colors is not None:
        return np.clip(np.asarray(vertex_colors, dtype=np.float64).reshape(-1, 3), 0.0, 1.0)
    return np.tile(np.asarray(color, dtype=np.float64), (n, 1))
