"""Trajectory accuracy metrics: ATE / RPE / RRE after global alignment.

Estimated trajectories recovered from generated video have an arbitrary
gauge (and in general an arbitrary scale), so estimated centers are first
aligned onto ground truth with a similarity (sim3, the default) or rigid
(se3) fit. Translation errors are normalized by the ground-truth span (the
maximum pairwise center distance) so scores are comparable across scenes
of unknown units; pass normalize=False for raw meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Trajectory
from .errors import DegenerateConfiguration, DegenerateTrajectory, DimensionMismatch
from .humanalign import SimilarityTransform, umeyama_similarity


@dataclass(frozen=True)
class TrajectoryErrors:
    """Scores for one estimated-vs-ground-truth trajectory pair.

    ate: RMS center distance after global alignment (span-normalized).
    rpe: RMS translation difference of consecutive relative motions.
    rre_deg: mean geodesic angle between consecutive relative rotations.
    """

    ate: float
    rpe: float
    rre_deg: float
    frames: int
    mode: str

    def as_dict(self) -> dict:
        return {
            "ate": self.ate,
            "rpe": self.rpe,
            "rre_deg": self.rre_deg,
            "frames": self.frames,
            "mode": self.mode,
        }


def _check_pair(est: Trajectory, gt: Trajectory) -> None:
    if est.frame_count != gt.frame_count:
        raise DimensionMismatch(
            f"frame counts differ: est {est.frame_count} vs gt {gt.frame_count}"
        )
    if est.frame_count < 3:
        raise ValueError("need >= 3 frames to align trajectories")


def align_trajectories(est: Trajectory, gt: Trajectory, mode: str = "sim3") -> SimilarityTransform:
    """Fit the similarity (sim3) or rigid (se3) map taking est centers onto gt.

    Raises:
        DegenerateTrajectory: centers are collinear or coincident, so the
            alignment rotation is not unique.
    """
    if mode not in ("se3", "sim3"):
        raise ValueError(f"mode must be 'se3' or 'sim3', got {mode!r}")
    _check_pair(est, gt)
    src = est.centers()
    dst = gt.centers()
    try:
        return umeyama_similarity(src, dst, np.ones(len(src)), with_scale=(mode == "sim3"))
    except DegenerateConfiguration as exc:
        raise DegenerateTrajectory(str(exc)) from exc


def trajectory_span(gt: Trajectory) -> float:
    """Maximum pairwise distance between ground-truth centers; 1 if below 1e-9."""
    c = gt.centers()
    diffs = c[:, None, :] - c[None, :, :]
    span = float(np.sqrt((diffs**2).sum(axis=2)).max())
    return span if span >= 1e-9 else 1.0


def compute_errors(
    est: Trajectory,
    gt: Trajectory,
    mode: str = "sim3",
    gap: int = 1,
    normalize: bool = True,
) -> TrajectoryErrors:
    """Score an estimated trajectory against ground truth after alignment.

    ATE is the RMS distance between aligned and ground-truth centers. RPE
    compares the camera-frame translation of frame-i -> frame-i+gap motions;
    RRE is the mean angle between the corresponding relative rotations.
    Both translation metrics divide by the ground-truth span when
    normalize=True.
    """
    T = align_trajectories(est, gt, mode)
    if gap < 1:
        raise ValueError(f"gap must be >= 1, got {gap}")
    n = est.frame_count
    denom = trajectory_span(gt) if normalize else 1.0

    est_centers = T.apply(est.centers())
    gt_centers = gt.centers()
    ate = float(np.sqrt(np.mean(np.sum((est_centers - gt_centers) ** 2, axis=1)))) / denom

    est_rot = np.einsum("ij,njk->nik", T.rotation, est.rotations())
    gt_rot = gt.rotations()
    if n > gap:
        i0 = np.arange(n - gap)
        i1 = i0 + gap
        # Relative motion expressed in frame i's camera frame.
        rel_t_est = np.einsum(
            "nji,nj->ni", est_rot[i0], est_centers[i1] - est_centers[i0]
        )
        rel_t_gt = np.einsum("nji,nj->ni", gt_rot[i0], gt_centers[i1] - gt_centers[i0])
        rpe = float(np.sqrt(np.mean(np.sum((rel_t_est - rel_t_gt) ** 2, axis=1)))) / denom

        rel_R_est = np.einsum("nji,njk->nik", est_rot[i0], est_rot[i1])
        rel_R_gt = np.einsum("nji,njk->nik", gt_rot[i0], gt_rot[i1])
        delta = np.einsum("nji,njk->nik", rel_R_est, rel_R_gt)
        # atan2 form of the geodesic angle: well-conditioned near 0 and pi.
        skew = 0.5 * np.stack(
            [
                delta[:, 2, 1] - delta[:, 1, 2],
                delta[:, 0, 2] - delta[:, 2, 0],
                delta[:, 1, 0] - delta[:, 0, 1],
            ],
            axis=1,
        )
        sin_a = np.linalg.norm(skew, axis=1)
        cos_a = (np.trace(delta, axis1=1, axis2=2) - 1.0) / 2.0
        angles = np.arctan2(sin_a, cos_a)
        angles[np.all(rel_R_est == rel_R_gt, axis=(1, 2))] = 0.0
        rre = float(np.degrees(np.mean(angles)))
    else:
        rpe = 0.0
        rre = 0.0

    return TrajectoryErrors(ate=ate, rpe=rpe, rre_deg=rre, frames=n, mode=mode)
