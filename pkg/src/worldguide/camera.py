"""Pinhole camera model, pose algebra, depth unprojection, and ray embeddings.

Coordinate conventions used throughout the toolkit:

- Camera frame: x right, y down, z forward; the camera looks along +z
  and depth is measured along the camera z axis in meters.
- Poses are stored camera-to-world as (rotation, center): a camera-frame
  point p maps to world coordinates via ``rotation @ p + center``. The
  world-to-camera view is derived on demand.
- Pixel centers sit at integer coordinates (u, v); the homogeneous pixel
  is (u, v, 1) with no half-pixel offset, so renders are bit-reproducible.
- Ray maps use channel order (direction, moment): d is the unit world-frame
  ray direction and m = camera_center x d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch

#: Default clip length (frames) for guidance videos.
DEFAULT_FRAME_COUNT = 81

#: Supported output resolutions as (width, height) pairs.
RESOLUTION_BUCKETS: Tuple[Tuple[int, int], ...] = (
    (768, 480),
    (720, 512),
    (608, 608),
    (512, 720),
    (480, 768),
)


def _as_readonly(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels.

    Attributes:
        fx, fy: Focal lengths in pixels.
        cx, cy: Principal point in pixels.
        width, height: Image size in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (self.width >= 1 and self.height >= 1):
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, new_width: int, new_height: int) -> "CameraIntrinsics":
        """Intrinsics after resizing the image to new_width x new_height."""
        sx = new_width / self.width
        sy = new_height / self.height
        return CameraIntrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=new_width,
            height=new_height,
        )


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world placement: rotation maps camera axes into the world.

    Attributes:
        rotation: 3x3 orthonormal matrix (camera frame -> world frame).
        center: Camera position in world coordinates (meters).
    """

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        R = _as_readonly(np.asarray(self.rotation).reshape(3, 3))
        c = _as_readonly(np.asarray(self.center).reshape(3))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    @property
    def optical_axis(self) -> np.ndarray:
        """World-frame viewing direction (+z of the camera)."""
        return self.rotation[:, 2].copy()


def compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Composition a ∘ b of rigid transforms: (a∘b)(p) = a(b(p))."""
    return CameraPose(a.rotation @ b.rotation, a.rotation @ b.center + a.center)


def invert(a: CameraPose) -> CameraPose:
    """Inverse rigid transform: compose(a, invert(a)) is the identity."""
    rt = a.rotation.T
    return CameraPose(rt, -rt @ a.center)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth (meters along camera z) with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vals = _as_readonly(np.asarray(self.values))
        if vals.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {vals.shape}")
        msk = np.ascontiguousarray(np.asarray(self.valid, dtype=bool))
        msk.setflags(write=False)
        if msk.shape != vals.shape:
            raise DimensionMismatch(f"mask shape {msk.shape} != depth shape {vals.shape}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", msk)
        v = vals[msk]
        if v.size and not (np.all(np.isfinite(v)) and np.all(v > 0)):
            raise ValueError("valid depth values must be finite and > 0")

    @staticmethod
    def from_values(values: np.ndarray) -> "DepthMap":
        """Build a map whose mask marks finite, positive entries as valid."""
        values = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(values) & (values > 0)
        return DepthMap(np.where(valid, values, 0.0), valid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PointCloud:
    """Colored world-space points; colors are RGB in [0, 1].

    source_pixel optionally records the (u, v) reference pixel each point
    was unprojected from.
    """

    positions: np.ndarray
    colors: np.ndarray
    source_pixel: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = _as_readonly(np.asarray(self.positions).reshape(-1, 3))
        col = _as_readonly(np.asarray(self.colors).reshape(-1, 3))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        if len(pos) != len(col):
            raise DimensionMismatch(f"{len(pos)} positions vs {len(col)} colors")
        if pos.size and not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if col.size and (col.min() < 0.0 or col.max() > 1.0):
            raise ValueError("colors must lie in [0, 1]")
        if self.source_pixel is not None:
            sp = _as_readonly(np.asarray(self.source_pixel).reshape(-1, 2), dtype=np.int64)
            if len(sp) != len(pos):
                raise DimensionMismatch("source_pixel length mismatch")
            object.__setattr__(self, "source_pixel", sp)

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class PluckerMap:
    """Per-pixel ray embedding, channels = (direction, moment), shape 6xHxW."""

    channels: np.ndarray

    def __post_init__(self):
        ch = _as_readonly(np.asarray(self.channels))
        if ch.ndim != 3 or ch.shape[0] != 6:
            raise ValueError(f"expected (6, h, w) channels, got {ch.shape}")
        object.__setattr__(self, "channels", ch)

    @property
    def direction(self) -> np.ndarray:
        return self.channels[:3]

    @property
    def moment(self) -> np.ndarray:
        return self.channels[3:]


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera poses sharing one set of intrinsics."""

    intrinsics: CameraIntrinsics
    poses: Tuple[CameraPose, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 1:
            raise ValueError("a trajectory needs at least one pose")

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    def centers(self) -> np.ndarray:
        """(N, 3) array of camera centers."""
        return np.stack([p.center for p in self.poses])

    def rotations(self) -> np.ndarray:
        """(N, 3, 3) array of camera-to-world rotations."""
        return np.stack([p.rotation for p in self.poses])


class Projection(NamedTuple):
    """Per-point projection results; coordinates are reported even when not visible."""

    pixels: np.ndarray  # (N, 2) continuous (u, v)
    depths: np.ndarray  # (N,) camera-frame z
    visible: np.ndarray  # (N,) bool: z > 0 and nearest pixel inside the image


def _pixel_grid(intr: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height), indexing="xy")
    return u, v


def unproject(
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    colors: np.ndarray,
) -> PointCloud:
    """Lift every valid depth pixel to a colored world-space point.

    A pixel (u, v) with depth d maps to ``rotation @ (d * K^-1 (u, v, 1)) + center``.

    Args:
        depth: Metric depth map, dimensions matching the intrinsics.
        intr: Pinhole intrinsics of the reference view.
        pose: Camera-to-world pose of the reference view.
        colors: (h, w, 3) image, float in [0, 1] or uint8.

    Returns:
        A PointCloud with one point per valid pixel (row-major pixel order)
        carrying the pixel color and (u, v) provenance. An empty mask yields
        an empty cloud.
    """
    h, w = depth.shape
    if (w, h) != (intr.width, intr.height):
        raise DimensionMismatch(
            f"depth is {w}x{h} but intrinsics expect {intr.width}x{intr.height}"
        )
    img = np.asarray(colors)
    if img.shape[:2] != (h, w):
        raise DimensionMismatch(f"color image {img.shape[:2]} != depth {(h, w)}")
    img = _normalize_image(img)

    valid = depth.valid
    u, v = _pixel_grid(intr)
    us = u[valid].astype(np.float64)
    vs = v[valid].astype(np.float64)
    d = depth.values[valid]

    # K^-1 (u, v, 1) scaled by depth, then rotated into the world.
    xc = (us - intr.cx) / intr.fx * d
    yc = (vs - intr.cy) / intr.fy * d
    cam = np.stack([xc, yc, d], axis=1)
    world = cam @ pose.rotation.T + pose.center

    return PointCloud(
        positions=world,
        colors=img[valid],
        source_pixel=np.stack([us, vs], axis=1).astype(np.int64),
    )


def _normalize_image(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return np.asarray(img, dtype=np.float64)


def round_to_pixel(coords: np.ndarray) -> np.ndarray:
    """Nearest integer pixel with deterministic half-up rounding."""
    return np.floor(np.asarray(coords) + 0.5).astype(np.int64)


def project(points: PointCloud, intr: CameraIntrinsics, pose: CameraPose) -> Projection:
    """Project world points into the camera; the inverse of unproject.

    A point is visible when its camera-frame depth is positive and its
    nearest integer pixel lies inside the image; pixel coordinates are
    reported either way (non-finite when depth is exactly zero).
    """
    rel = points.positions - pose.center
    cam = rel @ pose.rotation  # == rotation.T applied to each point
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    pix = np.stack([u, v], axis=1)
    with np.errstate(invalid="ignore"):
        pu = np.floor(u + 0.5)
        pv = np.floor(v + 0.5)
        inside = (pu >= 0) & (pu <= intr.width - 1) & (pv >= 0) & (pv <= intr.height - 1)
    visible = (z > 0) & np.isfinite(u) & np.isfinite(v) & inside
    return Projection(pixels=pix, depths=z, visible=visible)


def plucker_map(intr: CameraIntrinsics, pose: CameraPose) -> PluckerMap:
    """Per-pixel ray embedding for a view: d = R K^-1 (u,v,1) normalized, m = c x d."""
    u, v = _pixel_grid(intr)
    x = (u.astype(np.float64) - intr.cx) / intr.fx
    y = (v.astype(np.float64) - intr.cy) / intr.fy
    dirs = np.stack([x, y, np.ones_like(x)], axis=-1) @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    moments = np.cross(np.broadcast_to(pose.center, dirs.shape), dirs)
    channels = np.concatenate(
        [np.moveaxis(dirs, -1, 0), np.moveaxis(moments, -1, 0)], axis=0
    )
    return PluckerMap(channels)


def pick_resolution_bucket(width: int, height: int) -> Tuple[int, int]:
    """Pick the output resolution whose aspect ratio is nearest in log space.

    Scale-invariant by construction: (w, h) and (2w, 2h) select the same bucket.
    """
    if width < 1 or height < 1:
        raise ValueError(f"invalid input size {width}x{height}")
    target = math.log(width / height)
    best = min(RESOLUTION_BUCKETS, key=lambda wh: abs(math.log(wh[0] / wh[1]) - target))
    return best


def random_pose(rng: np.random.Generator, radius: float = 5.0) -> CameraPose:
    """Uniformly random orientation with a center inside a ball; test helper."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    center = rng.uniform(-radius, radius, size=3)
    return CameraPose(q, center)
