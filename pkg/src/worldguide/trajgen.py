"""Camera trajectory generation from orbit/translate primitives.

The orbit distance comes from the reference view's foreground: the median
valid depth inside the foreground mask ("depth medium" read as the median,
which unlike the mean is robust to stray depth values). With no mask, or
an empty one, the whole image counts as foreground.

Conventions: world-up is (0, -1, 0) (the y-down world of the camera
model); positive azimuth orbits counterclockwise seen from above (from
-gravity); positive elevation raises the camera. Translations are given in
the camera's local axes in units of the rotation radius, each component
limited to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .camera import (
    DEFAULT_FRAME_COUNT,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    Trajectory,
)
from .errors import NoValidDepth, ZeroLengthSpec

WORLD_UP = np.array([0.0, -1.0, 0.0])
_E1 = np.array([1.0, 0.0, 0.0])
_E2 = np.array([0.0, 0.0, 1.0])  # e1 x e2 = WORLD_UP (right-handed horizontal basis)


@dataclass(frozen=True)
class Rotation:
    """Orbit segment: sweep azimuth/elevation degrees about the rotation center."""

    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0


@dataclass(frozen=True)
class Translation:
    """Straight move along the camera's local axes, in rotation-radius units."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0

    def __post_init__(self):
        for name, v in (("dx", self.dx), ("dy", self.dy), ("dz", self.dz)):
            if abs(v) > 1.0:
                raise ValueError(f"translation component {name}={v} outside [-1, 1]")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])


Segment = Union[Rotation, Translation]


@dataclass(frozen=True)
class TrajectorySpec:
    """Ordered control segments plus the total frame budget."""

    frame_count: int = DEFAULT_FRAME_COUNT
    segments: Tuple[Segment, ...] = field(default_factory=tuple)
    follow: Optional[str] = None  # path to a roots track for follow shooting

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")


@dataclass(frozen=True)
class RotationCenter:
    """Orbit pivot: the point `radius` meters along the reference optical axis."""

    radius: float
    center: np.ndarray

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))


def rotation_center(
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    fg_mask: Optional[np.ndarray] = None,
) -> RotationCenter:
    """Derive the orbit radius/center from foreground depth.

    Radius is the median of valid depths inside fg_mask; a missing or empty
    mask falls back to the entire image.

    Raises:
        NoValidDepth: no valid depth inside the selected region.
    """
    sel = depth.valid
    if fg_mask is not None:
        fg = np.asarray(fg_mask, dtype=bool)
        if fg.shape != depth.shape:
            raise ValueError(f"mask shape {fg.shape} != depth shape {depth.shape}")
        if fg.any():
            sel = sel & fg
    vals = depth.values[sel]
    if vals.size == 0:
        raise NoValidDepth("no valid depth inside the foreground region")
    radius = float(np.median(vals))
    center = pose.center + radius * pose.optical_axis
    return RotationCenter(radius=radius, center=center)


def _look_at(position: np.ndarray, target: np.ndarray) -> CameraPose:
    """Camera-to-world pose looking from position at target, roll-stabilized."""
    f = target - position
    fn = np.linalg.norm(f)
    if fn < 1e-15:
        raise ValueError("camera position coincides with the look-at target")
    f = f / fn
    x = np.cross(f, WORLD_UP)
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        # Looking along the vertical axis: keep a fixed reference right vector.
        x = _E1 - np.dot(_E1, f) * f
        xn = np.linalg.norm(x)
    x = x / xn
    y = np.cross(f, x)
    return CameraPose(np.stack([x, y, f], axis=1), position)


def _orbit_state(center: np.ndarray, rc: RotationCenter) -> Tuple[float, float, float]:
    """(radius, azimuth, elevation) of a camera position around the pivot."""
    v = center - rc.center
    rho = float(np.linalg.norm(v))
    if rho < 1e-12:
        raise ValueError("camera sits on the rotation center; orbit undefined")
    up_comp = float(np.dot(v, WORLD_UP))
    h = v - up_comp * WORLD_UP
    hn = np.linalg.norm(h)
    theta = float(np.arctan2(np.dot(h, _E2), np.dot(h, _E1))) if hn > 1e-15 else 0.0
    phi = float(np.arctan2(up_comp, hn))
    return rho, theta, phi


def _orbit_position(rc: RotationCenter, rho: float, theta: float, phi: float) -> np.ndarray:
    horiz = np.cos(theta) * _E1 + np.sin(theta) * _E2
    return rc.center + rho * (np.cos(phi) * horiz + np.sin(phi) * WORLD_UP)


def build_trajectory(
    spec: TrajectorySpec,
    start: CameraPose,
    rc: RotationCenter,
    intr: CameraIntrinsics,
) -> Trajectory:
    """Expand a segment spec into a continuous pose sequence.

    Each segment is sampled uniformly (linear in orbit angles, linear in
    translation); consecutive segments share their boundary pose. Orbit
    segments keep the camera at its current distance from rc.center and
    re-aim it at rc.center each frame; translation segments move along the
    local axes of the pose entering the segment, orientation unchanged.
    The frame budget (frame_count poses total, including the start pose)
    is split across segments as evenly as possible.

    Raises:
        ZeroLengthSpec: the spec contains no segments.
    """
    if len(spec.segments) == 0:
        raise ZeroLengthSpec("trajectory spec has no segments")
    steps_total = spec.frame_count - 1
    k = len(spec.segments)
    base, extra = divmod(steps_total, k)
    steps = [base + (1 if i < extra else 0) for i in range(k)]

    poses: List[CameraPose] = [start]
    current = start
    for seg, n in zip(spec.segments, steps):
        if n == 0:
            continue
        if isinstance(seg, Rotation):
            rho, theta0, phi0 = _orbit_state(current.center, rc)
            d_az = np.deg2rad(seg.azimuth_deg)
            d_el = np.deg2rad(seg.elevation_deg)
            for j in range(1, n + 1):
                t = j / n
                pos = _orbit_position(rc, rho, theta0 + d_az * t, phi0 + d_el * t)
                poses.append(_look_at(pos, rc.center))
        elif isinstance(seg, Translation):
            disp = current.rotation @ (seg.vector * rc.radius)
            for j in range(1, n + 1):
                t = j / n
                poses.append(CameraPose(current.rotation, current.center + t * disp))
        else:
            raise TypeError(f"unknown segment type {type(seg).__name__}")
        current = poses[-1]
    return Trajectory(intrinsics=intr, poses=tuple(poses))


def resample_track(track: np.ndarray, frame_count: int) -> np.ndarray:
    """Nearest-index resampling of an (N, 3) track to a target frame count."""
    track = np.asarray(track, dtype=np.float64).reshape(-1, 3)
    n = len(track)
    if n == frame_count:
        return track
    if frame_count == 1 or n == 1:
        idx = np.zeros(frame_count, dtype=np.int64)
    else:
        idx = np.floor(np.arange(frame_count) * (n - 1) / (frame_count - 1) + 0.5).astype(np.int64)
    return track[idx]


def follow_shot(traj: Trajectory, roots: np.ndarray, aim_at_root: bool = False) -> Trajectory:
    """Offset each camera center by the subject root's displacement from frame 0.

    Rotations are untouched by default, so camera control and subject
    motion stay independently specifiable; aim_at_root additionally
    re-aims each frame at the current root.
    """
    roots = np.asarray(roots, dtype=np.float64).reshape(-1, 3)
    if len(roots) != traj.frame_count:
        raise ValueError(f"{len(roots)} roots for {traj.frame_count} frames")
    offsets = roots - roots[0]
    if aim_at_root:
        poses = tuple(
            _look_at(p.center + off, root)
            for p, off, root in zip(traj.poses, offsets, roots)
        )
    else:
        poses = tuple(
            CameraPose(p.rotation, p.center + off) for p, off in zip(traj.poses, offsets)
        )
    return Trajectory(intrinsics=traj.intrinsics, poses=poses)
