"""Alignment of human-space characters into the environment world.

2D body keypoints on the reference image bridge the two spaces: lifted
through metric depth they give environment-world anchors, a confidence-
weighted similarity transform (closed-form SVD solution) maps the
human-space keypoints onto them, and a gravity correction rotates the
result about the character's starting root so its vertical axis matches
the scene's.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .camera import CameraIntrinsics, CameraPose, DepthMap, PointCloud, unproject
from .errors import (
    AntiparallelGravity,
    DegenerateConfiguration,
    DimensionMismatch,
    FewerThan3Valid,
)

COCO17_KEYPOINT_COUNT = 17

#: Keypoints below this confidence are dropped from alignment.
DEFAULT_CONFIDENCE_MIN = 0.7

#: Default gravity direction of y-up character space (pointing down = -up).
DEFAULT_HUMAN_GRAVITY = np.array([0.0, -1.0, 0.0])


@dataclass(frozen=True)
class KeypointSet2D:
    """COCO-17 image keypoints with per-point confidence in [0, 1]."""

    points: np.ndarray  # (17, 2) pixel coordinates
    confidence: np.ndarray  # (17,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if len(pts) != COCO17_KEYPOINT_COUNT or len(conf) != COCO17_KEYPOINT_COUNT:
            raise ValueError(f"expected {COCO17_KEYPOINT_COUNT} keypoints, got {len(pts)}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)


@dataclass(frozen=True)
class KeypointSet3D:
    """COCO-17 keypoints in 3D with per-point weights; frame names the space."""

    points: np.ndarray  # (17, 3) meters
    weights: np.ndarray  # (17,) in [0, 1]
    frame: str = "human_world"  # or "env_world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(pts) != COCO17_KEYPOINT_COUNT or len(w) != COCO17_KEYPOINT_COUNT:
            raise ValueError(f"expected {COCO17_KEYPOINT_COUNT} keypoints, got {len(pts)}")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class SimilarityTransform:
    """Rigid-plus-scale map x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (..., 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation


@dataclass(frozen=True)
class CharacterSequence:
    """Per-frame character vertices plus the root position track.

    Vertex count is constant across frames; faces are optional topology
    shared by all frames (for surface densification before rendering).
    """

    vertices: np.ndarray  # (N, V, 3)
    roots: np.ndarray  # (N, 3)
    faces: Optional[np.ndarray] = None  # (F, 3) int, shared topology

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        roots = np.asarray(self.roots, dtype=np.float64).reshape(-1, 3)
        if verts.ndim != 3 or verts.shape[2] != 3:
            raise ValueError(f"vertices must be (frames, V, 3), got {verts.shape}")
        if len(roots) != len(verts):
            raise DimensionMismatch(f"{len(verts)} vertex frames vs {len(roots)} roots")
        if not np.all(np.isfinite(verts)):
            raise ValueError("vertices must be finite")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "roots", roots)
        if self.faces is not None:
            object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))

    @property
    def frame_count(self) -> int:
        return len(self.vertices)

    def resampled(self, frame_count: int) -> "CharacterSequence":
        """Nearest-index resampling to a target frame count."""
        n = self.frame_count
        if frame_count == n:
            return self
        if frame_count == 1 or n == 1:
            idx = np.zeros(frame_count, dtype=np.int64)
        else:
            idx = np.floor(np.arange(frame_count) * (n - 1) / (frame_count - 1) + 0.5).astype(np.int64)
        return CharacterSequence(self.vertices[idx], self.roots[idx], self.faces)


def lift_keypoints(
    kp2d: KeypointSet2D,
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    conf_min: float = DEFAULT_CONFIDENCE_MIN,
) -> KeypointSet3D:
    """Unproject 2D keypoints into the environment world through metric depth.

    Depth at each keypoint is sampled bilinearly over its valid neighbor
    pixels, falling back to the nearest valid pixel within 3 px. Keypoints
    below conf_min, outside the image, or without a depth sample get weight
    0; retained keypoints keep their confidence as weight.

    Raises:
        FewerThan3Valid: fewer than 3 keypoints kept a positive weight.
    """
    pts3d = np.zeros((COCO17_KEYPOINT_COUNT, 3))
    weights = np.zeros(COCO17_KEYPOINT_COUNT)
    for i in range(COCO17_KEYPOINT_COUNT):
        conf = kp2d.confidence[i]
        if conf < conf_min:
            continue
        u, v = kp2d.points[i]
        d = _sample_depth(depth, u, v)
        if d is None:
            continue
        xc = (u - intr.cx) / intr.fx * d
        yc = (v - intr.cy) / intr.fy * d
        pts3d[i] = pose.rotation @ np.array([xc, yc, d]) + pose.center
        weights[i] = conf
    if np.count_nonzero(weights) < 3:
        raise FewerThan3Valid(
            f"only {np.count_nonzero(weights)} keypoints usable (need >= 3)"
        )
    return KeypointSet3D(points=pts3d, weights=weights, frame="env_world")


def _sample_depth(depth: DepthMap, u: float, v: float) -> Optional[float]:
    """Bilinear depth over valid neighbors; nearest valid within 3 px fallback."""
    h, w = depth.shape
    if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
        return None
    x0 = int(np.floor(u))
    y0 = int(np.floor(v))
    fx = u - x0
    fy = v - y0
    total = 0.0
    acc = 0.0
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            x, y = x0 + dx, y0 + dy
            wgt = wx * wy
            if wgt <= 0.0 or x >= w or y >= h:
                continue
            if depth.valid[y, x]:
                total += wgt
                acc += wgt * depth.values[y, x]
    if total > 0.0:
        return acc / total
    # Nearest valid pixel in a 7x7 window (ties resolved by scan order).
    cx, cy = int(np.floor(u + 0.5)), int(np.floor(v + 0.5))
    best = None
    best_d2 = np.inf
    for y in range(max(cy - 3, 0), min(cy + 4, h)):
        for x in range(max(cx - 3, 0), min(cx + 4, w)):
            if not depth.valid[y, x]:
                continue
            d2 = (x - u) ** 2 + (y - v) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best = depth.values[y, x]
    return best


def umeyama_similarity(
    src: np.ndarray,
    dst: np.ndarray,
    weights: np.ndarray,
    with_scale: bool = True,
) -> SimilarityTransform:
    """Weighted closed-form similarity fit minimizing sum w_i |sR src_i + t - dst_i|^2.

    Weighted centroids and cross-covariance feed an SVD with determinant
    sign correction; scale comes from the weighted source variance. The
    result is the global optimum of the objective and is invariant to
    scaling all weights by a positive constant.

    Raises:
        DegenerateConfiguration: fewer than 3 positively weighted pairs, or
            the weighted points are collinear (rotation not unique).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not (len(src) == len(dst) == len(w)):
        raise DimensionMismatch("src/dst/weights lengths differ")
    positive = w > 0
    if np.count_nonzero(positive) < 3:
        raise DegenerateConfiguration(
            f"need >= 3 positively weighted pairs, got {np.count_nonzero(positive)}"
        )
    sw = w.sum()
    mu_src = (w[:, None] * src).sum(axis=0) / sw
    mu_dst = (w[:, None] * dst).sum(axis=0) / sw
    src_c = src - mu_src
    dst_c = dst - mu_dst
    cov = (w[:, None] * dst_c).T @ src_c / sw
    U, S, Vt = np.linalg.svd(cov)
    if S[1] <= S[0] * 1e-9:
        raise DegenerateConfiguration("weighted points are collinear; rotation not unique")
    if np.array_equal(src[positive], dst[positive]):
        # Identity is the exact global optimum for bit-identical point sets.
        return SimilarityTransform.identity()
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = U @ np.diag(d) @ Vt
    if with_scale:
        var_src = (w * (src_c**2).sum(axis=1)).sum() / sw
        scale = float((S * d).sum() / var_src)
    else:
        scale = 1.0
    t = mu_dst - scale * (R @ mu_src)
    return SimilarityTransform(scale=scale, rotation=R, translation=t)


def weighted_umeyama(src: KeypointSet3D, dst: KeypointSet3D) -> SimilarityTransform:
    """Similarity transform mapping src keypoints onto dst keypoints.

    Pair weight is the product of both sets' weights, so a point rejected
    in either space contributes nothing.
    """
    return umeyama_similarity(src.points, dst.points, src.weights * dst.weights)


def alignment_objective(
    T: SimilarityTransform, src: np.ndarray, dst: np.ndarray, weights: np.ndarray
) -> float:
    """Weighted squared alignment error sum w_i |T(src_i) - dst_i|^2."""
    r = T.apply(np.asarray(src)) - np.asarray(dst)
    return float((np.asarray(weights) * (r**2).sum(axis=1)).sum())


def gravity_calibrate(
    T: SimilarityTransform,
    g_env: np.ndarray,
    g_hum: np.ndarray,
    pivot: np.ndarray,
) -> SimilarityTransform:
    """Rotate T about a pivot so the transformed human gravity matches g_env.

    The correction is the minimal rotation taking T.rotation @ g_hum onto
    g_env, applied about the pivot point (which stays fixed); scale is
    unchanged.

    Raises:
        AntiparallelGravity: the two directions oppose within 1e-6, leaving
            the rotation axis undefined.
    """
    g_env = _unit(np.asarray(g_env, dtype=np.float64), "g_env")
    g_hum = _unit(np.asarray(g_hum, dtype=np.float64), "g_hum")
    pivot = np.asarray(pivot, dtype=np.float64).reshape(3)
    g_cur = T.rotation @ g_hum
    c = np.cross(g_cur, g_env)
    s = np.linalg.norm(c)
    d = float(np.dot(g_cur, g_env))
    if s < 1e-6 and d < 0:
        raise AntiparallelGravity("gravity directions oppose; correction axis undefined")
    if s < 1e-15:
        return T
    axis = c / s
    angle = np.arctan2(s, d)
    R_corr = _rodrigues(axis, angle)
    rotation = R_corr @ T.rotation
    translation = R_corr @ (T.translation - pivot) + pivot
    return SimilarityTransform(scale=T.scale, rotation=rotation, translation=translation)


def _unit(v: np.ndarray, name: str) -> np.ndarray:
    v = v.reshape(3)
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"{name} must be unit length, |v| = {n:.6f}")
    return v / n


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    K = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def apply_transform(seq: CharacterSequence, T: SimilarityTransform) -> CharacterSequence:
    """Map every vertex and root of a sequence through the similarity transform.

    The hand-model sequence shares the body's transform: hand meshes share
    vertices with the body's hand region, so the same T places both.
    """
    return CharacterSequence(
        vertices=T.apply(seq.vertices),
        roots=T.apply(seq.roots),
        faces=seq.faces,
    )


def align_human_to_env(
    kp2d: KeypointSet2D,
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    kp_hum: KeypointSet3D,
    g_env: np.ndarray,
    g_hum: np.ndarray,
    seq: CharacterSequence,
    conf_min: float = DEFAULT_CONFIDENCE_MIN,
) -> Tuple[SimilarityTransform, CharacterSequence]:
    """Full alignment: lift keypoints, fit the transform, calibrate gravity, apply.

    The gravity correction pivots on the aligned first-frame root so the
    character's starting ground contact is preserved.

    Returns:
        (calibrated transform, environment-world sequence)
    """
    kp_env = lift_keypoints(kp2d, depth, intr, pose, conf_min=conf_min)
    T = weighted_umeyama(kp_hum, kp_env)
    pivot = T.apply(seq.roots[0])
    T = gravity_calibrate(T, g_env, g_hum, pivot)
    return T, apply_transform(seq, T)
