import numpy as np
import pytest

from worldguide.camera import CameraIntrinsics, CameraPose, DepthMap, random_pose


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_scene_inputs(root, rng, with_human=False, with_hands=False, frames=7):
    """Write a synthetic scene's input files; returns a dict of paths/objects.

    The optional human inputs are constructed so the similarity transform
    is exactly recoverable and already gravity-consistent (g_hum derived
    from the constructed rotation), making alignment round-trip exact.
    """
    from worldguide import fileio
    from worldguide.humanalign import KeypointSet2D, KeypointSet3D, lift_keypoints
    from worldguide.trajgen import Rotation, TrajectorySpec, Translation

    w, h = 64, 48
    intr = CameraIntrinsics(fx=80.0, fy=80.0, cx=w / 2, cy=h / 2, width=w, height=h)
    pose = CameraPose.identity()
    u, v = np.meshgrid(np.arange(w), np.arange(h), indexing="xy")
    depth = DepthMap.from_values(2.0 + 0.02 * v + 0.2 * np.sin(u / 7.0))
    image = (rng.random((h, w, 3)) * 255).astype(np.uint8)

    paths = {
        "ref": root / "ref.png",
        "depth": root / "depth.pfm",
        "cam": root / "cam.json",
        "spec": root / "spec.json",
    }
    fileio.save_png(paths["ref"], image)
    fileio.save_pfm(paths["depth"], depth)
    fileio.save_cameras(paths["cam"], intr, [pose])
    spec = TrajectorySpec(
        frame_count=frames,
        segments=(Rotation(azimuth_deg=25.0), Translation(dz=0.15)),
    )
    fileio.save_trajectory_spec(paths["spec"], spec)
    out = {
        "paths": paths, "intr": intr, "pose": pose, "depth": depth,
        "image": image, "spec": spec,
    }

    if with_human:
        kp_px = np.stack([rng.uniform(5, w - 6, 17), rng.uniform(5, h - 6, 17)], axis=1)
        kp2d = KeypointSet2D(kp_px, np.ones(17))
        kp_env = lift_keypoints(kp2d, depth, intr, pose)
        g_env = np.array([0.0, 1.0, 0.0])
        R = random_pose(rng).rotation
        s_true, t_true = 1.4, np.array([0.6, -0.2, 0.1])
        hum_pts = ((kp_env.points - t_true) / s_true) @ R
        g_hum = R.T @ g_env

        paths["kp2d"] = root / "kp2d.json"
        paths["kp_hum"] = root / "kp_hum.json"
        fileio.save_keypoints2d(paths["kp2d"], kp2d)
        fileio.save_keypoints3d(paths["kp_hum"], KeypointSet3D(hum_pts, np.ones(17)))

        seq_dir = root / "seq"
        seq_dir.mkdir()
        base = np.array([[0, 0, 0], [0.3, 0, 0], [0, 0.3, 0], [0, 0, 0.3]], float)
        faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
        roots = []
        for i in range(5):
            verts = base + np.array([0.08 * i, 0.0, 0.0]) + hum_pts.mean(0)
            fileio.save_obj(seq_dir / f"frame_{i:03d}.obj", verts, faces)
            roots.append(verts.mean(0))
        fileio.save_roots(seq_dir / "roots.json", np.array(roots))
        paths["seq"] = seq_dir
        out.update(
            kp2d=kp2d, kp_env=kp_env, g_env=g_env, g_hum=g_hum,
            T_true=(s_true, R, t_true), hum_pts=hum_pts,
        )

        if with_hands:
            hand_dir = root / "hands"
            hand_dir.mkdir()
            hand_base = base * 0.4 + np.array([0.0, 0.35, 0.0])
            for i in range(5):
                verts = hand_base + np.array([0.08 * i, 0.0, 0.0]) + hum_pts.mean(0)
                fileio.save_obj(hand_dir / f"frame_{i:03d}.obj", verts, faces)
            paths["hands"] = hand_dir
    return out


@pytest.fixture
def small_intr():
    return CameraIntrinsics(fx=90.0, fy=85.0, cx=32.0, cy=24.0, width=64, height=48)


def make_depth(rng, h, w, lo=1.0, hi=6.0, holes=0.0):
    """Random valid depth map, optionally with a fraction of invalid pixels."""
    values = rng.uniform(lo, hi, (h, w))
    valid = np.ones((h, w), dtype=bool)
    if holes > 0:
        valid &= rng.random((h, w)) >= holes
    return DepthMap(np.where(valid, values, 0.0), valid)


def random_cloud(rng, n, spread=4.0, centered_at=(0.0, 0.0, 5.0)):
    """Random colored cloud in front of the identity camera."""
    from worldguide.camera import PointCloud

    pos = rng.normal(0.0, spread, (n, 3)) + np.asarray(centered_at)
    col = rng.random((n, 3))
    return PointCloud(positions=pos, colors=col)
