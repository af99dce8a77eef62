"""Report rendering for trajectory evaluation: figures and delimited tables."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .camera import Trajectory
from .evalmetrics import TrajectoryErrors, align_trajectories
from .humanalign import SimilarityTransform

CSV_COLUMNS = ("name", "frames", "ate", "rpe", "rre_deg")


def plot_trajectory_report(
    est: Trajectory,
    gt: Trajectory,
    errors: TrajectoryErrors,
    out_path,
    transform: Optional[SimilarityTransform] = None,
) -> None:
    """Render the aligned-path overlay and per-frame error curve to a PNG.

    The left panel shows the top-down (x-z) ground-truth path against the
    aligned estimate; the right panel plots per-frame center distance.
    """
    T = transform if transform is not None else align_trajectories(est, gt, errors.mode)
    est_c = T.apply(est.centers())
    gt_c = gt.centers()
    per_frame = np.linalg.norm(est_c - gt_c, axis=1)

    fig, (ax_path, ax_err) = plt.subplots(1, 2, figsize=(10, 4.2))
    ax_path.plot(gt_c[:, 0], gt_c[:, 2], "-", color="black", label="ground truth")
    ax_path.plot(est_c[:, 0], est_c[:, 2], "--", color="tab:blue", label="aligned estimate")
    ax_path.scatter(gt_c[0, 0], gt_c[0, 2], color="black", marker="o", s=25, zorder=3)
    ax_path.set_xlabel("x [m]")
    ax_path.set_ylabel("z [m]")
    ax_path.set_title(f"trajectory ({errors.mode}, {errors.frames} frames)")
    ax_path.set_aspect("equal", adjustable="datalim")
    ax_path.legend(loc="best", fontsize=8)

    ax_err.plot(per_frame, color="tab:red")
    ax_err.set_xlabel("frame")
    ax_err.set_ylabel("center error [m]")
    ax_err.set_title(
        f"ATE {errors.ate:.4f} / RPE {errors.rpe:.4f} / RRE {errors.rre_deg:.3f}°"
    )
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def write_metrics_csv(path, rows: Sequence[dict]) -> None:
    """Write per-case metric rows (and a mean row for multi-case runs)."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in CSV_COLUMNS})
        if len(rows) > 1:
            writer.writerow(_mean_row(rows))


def _mean_row(rows: Sequence[dict]) -> dict:
    out = {"name": "mean", "frames": ""}
    for key in ("ate", "rpe", "rre_deg"):
        out[key] = float(np.mean([row[key] for row in rows]))
    return out


def format_metrics_table(rows: Sequence[dict]) -> str:
    """Plain-text metrics table (ATE / RPE / RRE columns)."""
    header = f"{'name':<24}{'ATE':>10}{'RPE':>10}{'RRE':>10}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{str(row['name']):<24}{row['ate']:>10.4f}{row['rpe']:>10.4f}{row['rre_deg']:>10.4f}"
        )
    if len(rows) > 1:
        m = _mean_row(rows)
        lines.append("-" * len(header))
        lines.append(f"{'mean':<24}{m['ate']:>10.4f}{m['rpe']:>10.4f}{m['rre_deg']:>10.4f}")
    return "\n".join(lines)
