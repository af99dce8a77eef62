"""Robust affine alignment of monocular depth to metric scale.

Monocular depth is only correct up to an affine map d_metric = a * d_mono + b.
Sparse metric anchors (SfM / MVS depths at matched pixels) constrain (a, b);
RANSAC over 2-point minimal samples rejects bad anchors and a weighted
least-squares refit on the inlier set produces the final coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .camera import DepthMap
from .errors import DegenerateDepth, InsufficientInliers

#: Relative spread below which mono depth counts as constant.
CONSTANT_DEPTH_REL = 1e-6


@dataclass(frozen=True)
class DepthCorrespondences:
    """Paired (mono, metric) depth samples with per-pair weights in [0, 1]."""

    mono: np.ndarray
    metric: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        mono = np.asarray(self.mono, dtype=np.float64).reshape(-1)
        metric = np.asarray(self.metric, dtype=np.float64).reshape(-1)
        weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        if not (len(mono) == len(metric) == len(weight)):
            raise ValueError("mono/metric/weight lengths differ")
        if len(mono) < 2:
            raise ValueError("at least 2 correspondences are required")
        for name, arr in (("mono", mono), ("metric", metric)):
            if not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
                raise ValueError(f"{name} depths must be finite and > 0")
        if np.any(weight < 0) or np.any(weight > 1):
            raise ValueError("weights must lie in [0, 1]")
        object.__setattr__(self, "mono", mono)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "weight", weight)

    @staticmethod
    def from_pairs(pairs: Iterable[Tuple[float, float, float]]) -> "DepthCorrespondences":
        """Build from (mono, metric, weight) triples."""
        arr = np.asarray(list(pairs), dtype=np.float64)
        return DepthCorrespondences(arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return len(self.mono)


@dataclass(frozen=True)
class ScaleShift:
    """Affine depth map coefficients d' = a * d + b, with the achieved inlier ratio."""

    a: float
    b: float
    inlier_ratio: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"scale must be positive to preserve depth order, got {self.a}")


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    inlier_threshold_rel: float = 0.05
    min_inlier_ratio: float = 0.3
    rng_seed: int = 0


def _weighted_affine_fit(d: np.ndarray, m: np.ndarray, w: np.ndarray) -> Tuple[float, float]:
    """Weighted least squares for m ~ a*d + b via 2x2 normal equations."""
    sw = w.sum()
    swd = (w * d).sum()
    swdd = (w * d * d).sum()
    swm = (w * m).sum()
    swdm = (w * d * m).sum()
    det = swdd * sw - swd * swd
    if abs(det) < 1e-30:
        raise InsufficientInliers("inlier set is rank deficient for an affine fit")
    a = (swdm * sw - swd * swm) / det
    b = (swdd * swm - swd * swdm) / det
    return a, b


def estimate_scale_shift(corr: DepthCorrespondences, cfg: RansacConfig = RansacConfig()) -> ScaleShift:
    """RANSAC estimate of the metric scale/shift from sparse anchors.

    Two-point minimal samples propose (a, b); a pair is an inlier when its
    relative residual |a*d + b - metric| / metric is below the threshold.
    The best hypothesis (by inlier count, earliest iteration winning ties)
    is refit by weighted least squares on its inlier set. Results are a
    deterministic function of the inputs and cfg.rng_seed.

    Raises:
        DegenerateDepth: mono depths are constant within 1e-6 relative spread.
        InsufficientInliers: final inlier ratio below cfg.min_inlier_ratio,
            or no sample produced a positive-scale model.
    """
    d, m, w = corr.mono, corr.metric, corr.weight
    n = len(corr)
    spread = (d.max() - d.min()) / d.max()
    if spread < CONSTANT_DEPTH_REL:
        raise DegenerateDepth(
            f"mono depth spread {spread:.3e} below {CONSTANT_DEPTH_REL:.0e} relative"
        )

    rng = np.random.default_rng(cfg.rng_seed)
    samples = rng.integers(0, n, size=(cfg.iterations, 2))
    i, j = samples[:, 0], samples[:, 1]
    dd = d[j] - d[i]
    ok = np.abs(dd) > CONSTANT_DEPTH_REL * d.max()
    with np.errstate(divide="ignore", invalid="ignore"):
        a_hyp = np.where(ok, (m[j] - m[i]) / dd, np.nan)
    b_hyp = m[i] - a_hyp * d[i]
    ok &= np.isfinite(a_hyp) & (a_hyp > 0)
    if not ok.any():
        raise InsufficientInliers("no minimal sample produced a positive-scale model")

    # Score hypotheses in blocks to bound memory; earliest best wins ties.
    best_count = -1
    best_idx = -1
    block = max(1, int(8_000_000 // n))
    for start in range(0, cfg.iterations, block):
        stop = min(start + block, cfg.iterations)
        resid = np.abs(a_hyp[start:stop, None] * d[None, :] + b_hyp[start:stop, None] - m[None, :])
        inl = (resid / m[None, :] < cfg.inlier_threshold_rel) & ok[start:stop, None]
        counts = inl.sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best_idx = start + k
    if best_count < 2:
        raise InsufficientInliers("best hypothesis supports fewer than 2 inliers")

    support = np.abs(a_hyp[best_idx] * d + b_hyp[best_idx] - m) / m < cfg.inlier_threshold_rel
    a, b = _weighted_affine_fit(d[support], m[support], w[support])
    if not a > 0:
        raise InsufficientInliers(f"refit produced non-positive scale {a:.3e}")

    final_inliers = np.abs(a * d + b - m) / m < cfg.inlier_threshold_rel
    ratio = float(final_inliers.sum()) / n
    if ratio < cfg.min_inlier_ratio:
        raise InsufficientInliers(
            f"inlier ratio {ratio:.3f} below minimum {cfg.min_inlier_ratio:.3f}"
        )
    return ScaleShift(a=float(a), b=float(b), inlier_ratio=ratio)


def apply_scale_shift(depth: DepthMap, s: ScaleShift) -> DepthMap:
    """Map depth values through d' = a*d + b; non-positive results become invalid."""
    values = s.a * depth.values + s.b
    valid = depth.valid & (values > 0)
    return DepthMap(np.where(valid, values, 0.0), valid)
