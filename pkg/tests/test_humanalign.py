import numpy as np
import pytest

from worldguide.camera import CameraIntrinsics, CameraPose, DepthMap, random_pose
from worldguide.errors import (
    AntiparallelGravity,
    DegenerateConfiguration,
    FewerThan3Valid,
)
from worldguide.humanalign import (
    CharacterSequence,
    KeypointSet2D,
    KeypointSet3D,
    SimilarityTransform,
    align_human_to_env,
    alignment_objective,
    apply_transform,
    gravity_calibrate,
    lift_keypoints,
    umeyama_similarity,
    weighted_umeyama,
)

from oracles import iterative_similarity_minimum, rodrigues


def make_intr(w=64, h=48):
    return CameraIntrinsics(fx=80.0, fy=80.0, cx=w / 2, cy=h / 2, width=w, height=h)


def random_similarity(rng, s_lo=0.1, s_hi=10.0):
    pose = random_pose(rng)
    return SimilarityTransform(
        scale=float(rng.uniform(s_lo, s_hi)),
        rotation=pose.rotation,
        translation=rng.uniform(-5, 5, 3),
    )


class TestLiftKeypoints:
    def test_center_keypoint(self):
        intr = make_intr()
        depth = DepthMap.from_values(np.full((48, 64), 2.0))
        pts = np.tile([32.0, 24.0], (17, 1))
        pts[3:] = [10.0, 10.0]
        kp = KeypointSet2D(pts, np.ones(17))
        out = lift_keypoints(kp, depth, intr, CameraPose.identity())
        np.testing.assert_allclose(out.points[0], [0.0, 0.0, 2.0], atol=1e-12)
        assert out.weights[0] == 1.0
        assert out.frame == "env_world"

    def test_confidence_gate_at_070(self):
        intr = make_intr()
        depth = DepthMap.from_values(np.full((48, 64), 2.0))
        pts = np.tile([32.0, 24.0], (17, 1))
        conf = np.ones(17)
        conf[5] = 0.69
        conf[6] = 0.70
        out = lift_keypoints(KeypointSet2D(pts, conf), depth, intr, CameraPose.identity())
        assert out.weights[5] == 0.0
        assert out.weights[6] == 0.70

    def test_invalid_depth_pixel_weight_zero(self):
        intr = make_intr()
        values = np.full((48, 64), 2.0)
        valid = np.ones((48, 64), bool)
        valid[:20, :30] = False  # kill a large region incl. the 3px fallback window
        depth = DepthMap(np.where(valid, values, 0.0), valid)
        pts = np.tile([40.0, 40.0], (17, 1))
        pts[0] = [10.0, 10.0]
        out = lift_keypoints(KeypointSet2D(pts, np.ones(17)), depth, intr, CameraPose.identity())
        assert out.weights[0] == 0.0
        assert out.weights[1] == 1.0

    def test_nearest_valid_fallback_within_3px(self):
        intr = make_intr()
        values = np.full((48, 64), 3.0)
        valid = np.zeros((48, 64), bool)
        valid[26, 34] = True  # lone valid pixel 2px away
        depth = DepthMap(np.where(valid, values, 0.0), valid)
        pts = np.tile([32.0, 24.0], (17, 1))
        pts[1:] = [34.0, 26.0]
        out = lift_keypoints(KeypointSet2D(pts, np.ones(17)), depth, intr, CameraPose.identity())
        assert out.weights[0] == 1.0  # (32,24) is 2px from (34,26) in each axis

    def test_fewer_than_3_raises(self):
        intr = make_intr()
        depth = DepthMap.from_values(np.full((48, 64), 2.0))
        conf = np.zeros(17)
        conf[:2] = 1.0
        with pytest.raises(FewerThan3Valid):
            lift_keypoints(
                KeypointSet2D(np.tile([32.0, 24.0], (17, 1)), conf),
                depth, intr, CameraPose.identity(),
            )


class TestWeightedUmeyama:
    def test_identity_on_same_points(self, rng):
        pts = rng.standard_normal((17, 3))
        src = KeypointSet3D(pts, np.ones(17))
        dst = KeypointSet3D(pts, np.ones(17), frame="env_world")
        T = weighted_umeyama(src, dst)
        assert T.scale == 1.0
        np.testing.assert_array_equal(T.rotation, np.eye(3))
        np.testing.assert_array_equal(T.translation, np.zeros(3))

    def test_constructed_transform_recovered(self, rng):
        pts = rng.standard_normal((17, 3))
        Rz90 = rodrigues([0, 0, 1], np.pi / 2)
        dst_pts = 2.0 * pts @ Rz90.T + np.array([1.0, 0.0, 0.0])
        T = weighted_umeyama(
            KeypointSet3D(pts, np.ones(17)),
            KeypointSet3D(dst_pts, np.ones(17), frame="env_world"),
        )
        assert abs(T.scale - 2.0) < 1e-9
        assert np.abs(T.rotation - Rz90).max() < 1e-9
        assert np.abs(T.translation - [1.0, 0.0, 0.0]).max() < 1e-9

    def test_exact_recovery_sweep(self, rng):
        for _ in range(50):
            T_true = random_similarity(rng)
            src = rng.standard_normal((17, 3)) * rng.uniform(0.5, 3.0)
            dst = T_true.apply(src)
            w = rng.uniform(0.1, 1.0, 17)
            T = umeyama_similarity(src, dst, w)
            assert abs(T.scale - T_true.scale) < 1e-9 * max(1.0, T_true.scale)
            assert np.abs(T.rotation - T_true.rotation).max() < 1e-9
            assert np.abs(T.apply(src) - dst).max() < 1e-9 * max(1.0, np.abs(dst).max())

    def test_zero_weight_outliers_ignored(self, rng):
        T_true = random_similarity(rng)
        src = rng.standard_normal((17, 3))
        dst = T_true.apply(src)
        w = np.ones(17)
        w[12:] = 0.0
        dst_corrupted = dst.copy()
        dst_corrupted[12:] += rng.uniform(5, 10, (5, 3))
        T = umeyama_similarity(src, dst_corrupted, w)
        T_ref = umeyama_similarity(src[:12], dst[:12], np.ones(12))
        assert np.abs(T.rotation - T_ref.rotation).max() < 1e-12
        assert abs(T.scale - T_ref.scale) < 1e-12

    def test_weight_scaling_invariance(self, rng):
        src = rng.standard_normal((17, 3))
        dst = rng.standard_normal((17, 3))
        w = rng.uniform(0.1, 1.0, 17)
        T1 = umeyama_similarity(src, dst, w)
        T2 = umeyama_similarity(src, dst, 7.3 * w / 7.3 * 1.0)
        T3 = umeyama_similarity(src, dst, w * 0.25)
        assert abs(T1.scale - T3.scale) < 1e-12
        assert np.abs(T1.rotation - T3.rotation).max() < 1e-12
        assert np.abs(T1.translation - T3.translation).max() < 1e-12
        assert np.abs(T1.rotation - T2.rotation).max() < 1e-12

    def test_noisy_objective_matches_iterative_oracle(self, rng):
        for trial in range(5):
            T_true = random_similarity(rng, s_lo=0.5, s_hi=2.0)
            src = rng.standard_normal((17, 3))
            dst = T_true.apply(src) + rng.normal(0, 0.05, (17, 3))
            w = rng.uniform(0.2, 1.0, 17)
            T = umeyama_similarity(src, dst, w)
            ours = alignment_objective(T, src, dst, w)
            oracle = iterative_similarity_minimum(src, dst, w, seed=trial)
            assert ours <= oracle + 1e-9  # closed form is the global optimum
            assert abs(ours - oracle) < 1e-6

    def test_collinear_raises(self):
        src = np.zeros((17, 3))
        src[:, 0] = np.arange(17)
        dst = src * 2.0
        with pytest.raises(DegenerateConfiguration):
            umeyama_similarity(src, dst, np.ones(17))

    def test_fewer_than_3_weighted_raises(self, rng):
        src = rng.standard_normal((17, 3))
        w = np.zeros(17)
        w[:2] = 1.0
        with pytest.raises(DegenerateConfiguration):
            umeyama_similarity(src, src + 1.0, w)


class TestGravityCalibrate:
    def test_already_aligned_unchanged(self, rng):
        g_env = np.array([0.0, 1.0, 0.0])
        pose = random_pose(rng)
        g_hum = pose.rotation.T @ g_env
        T = SimilarityTransform(1.3, pose.rotation, rng.uniform(-2, 2, 3))
        out = gravity_calibrate(T, g_env, g_hum, np.zeros(3))
        assert out is T

    def test_perpendicular_gives_90_degrees(self):
        T = SimilarityTransform.identity()
        g_env = np.array([0.0, 1.0, 0.0])
        g_hum = np.array([1.0, 0.0, 0.0])
        pivot = np.array([1.0, 2.0, 3.0])
        out = gravity_calibrate(T, g_env, g_hum, pivot)
        corrected = out.rotation @ g_hum
        np.testing.assert_allclose(corrected, g_env, atol=1e-12)
        np.testing.assert_allclose(out.apply(pivot), T.apply(pivot), atol=1e-12)

    def test_antiparallel_raises(self):
        T = SimilarityTransform.identity()
        with pytest.raises(AntiparallelGravity):
            gravity_calibrate(T, np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0]), np.zeros(3))

    def test_random_misalignments_geometry(self, rng):
        for _ in range(50):
            T = random_similarity(rng, s_lo=0.5, s_hi=3.0)
            g_hum = rng.standard_normal(3)
            g_hum /= np.linalg.norm(g_hum)
            theta = rng.uniform(0, np.deg2rad(30))
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            g_env = rodrigues(axis, theta) @ (T.rotation @ g_hum)
            g_env /= np.linalg.norm(g_env)
            pivot = rng.uniform(-3, 3, 3)
            out = gravity_calibrate(T, g_env, g_hum, pivot)
            # parallel within 1e-9 rad, scale preserved, pivot fixed
            residual = np.linalg.norm(np.cross(out.rotation @ g_hum, g_env))
            assert residual < 1e-9
            assert out.scale == T.scale
            # the human point that mapped onto the pivot still maps onto it
            preimage = _inverse_apply(T, pivot)
            assert np.abs(out.apply(preimage) - pivot).max() < 1e-9
            # keypoint motion bounded by chord length x distance to pivot
            pts = rng.uniform(-4, 4, (17, 3))
            moved = np.linalg.norm(out.apply(pts) - T.apply(pts), axis=1)
            dist = np.linalg.norm(T.apply(pts) - pivot, axis=1)
            corr_angle = _rotation_angle(out.rotation @ T.rotation.T)
            bound = 2.0 * np.sin(corr_angle / 2.0) * dist
            assert np.all(moved <= bound + 1e-9)


def _inverse_apply(T, pts):
    return ((np.asarray(pts) - T.translation) / T.scale) @ T.rotation


def _rotation_angle(R):
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


class TestApplyTransform:
    def _seq(self, rng, frames=4, v=10):
        verts = rng.standard_normal((frames, v, 3))
        roots = verts.mean(axis=1)
        return CharacterSequence(vertices=verts, roots=roots)

    def test_identity(self, rng):
        seq = self._seq(rng)
        out = apply_transform(seq, SimilarityTransform.identity())
        np.testing.assert_array_equal(out.vertices, seq.vertices)

    def test_pure_translation(self, rng):
        seq = self._seq(rng)
        T = SimilarityTransform(1.0, np.eye(3), np.array([0.0, 0.0, 1.0]))
        out = apply_transform(seq, T)
        np.testing.assert_allclose(out.vertices, seq.vertices + [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(out.roots, seq.roots + [0, 0, 1], atol=1e-12)

    def test_distances_scale_exactly(self, rng):
        seq = self._seq(rng)
        T = random_similarity(rng, s_lo=0.5, s_hi=4.0)
        out = apply_transform(seq, T)
        for f in range(seq.frame_count):
            d_in = np.linalg.norm(seq.vertices[f][None] - seq.vertices[f][:, None], axis=2)
            d_out = np.linalg.norm(out.vertices[f][None] - out.vertices[f][:, None], axis=2)
            np.testing.assert_allclose(d_out, T.scale * d_in, rtol=1e-9, atol=1e-12)

    def test_resample(self, rng):
        seq = self._seq(rng, frames=5)
        up = seq.resampled(9)
        assert up.frame_count == 9
        np.testing.assert_array_equal(up.vertices[0], seq.vertices[0])
        np.testing.assert_array_equal(up.vertices[-1], seq.vertices[-1])


def build_env_scene(rng, tilt_deg=0.0, walk_frames=5, walk_step=(0.2, 0.0, 0.0)):
    """Environment with liftable keypoints re-expressed in a tilted human frame.

    Returns the inputs of align_human_to_env plus the ground-truth env
    keypoints. The constructed similarity is gravity-consistent up to a
    rotation of tilt_deg about a horizontal axis, so tilt_deg=0 makes the
    round trip exact.
    """
    intr = make_intr()
    depth = DepthMap.from_values(rng.uniform(1.5, 4.0, (48, 64)))
    pose = CameraPose.identity()
    pts2d = np.stack(
        [rng.uniform(4, intr.width - 5, 17), rng.uniform(4, intr.height - 5, 17)], axis=1
    )
    kp2d = KeypointSet2D(pts2d, np.ones(17))
    kp_env = lift_keypoints(kp2d, depth, intr, pose)

    g_env = np.array([0.0, 1.0, 0.0])
    base = random_pose(rng).rotation
    g_hum = base.T @ g_env  # gravity-consistent alignment rotation
    R_align = base
    horiz_axis = np.array([1.0, 0.0, 0.0])
    R_tilt = rodrigues(horiz_axis, np.deg2rad(tilt_deg))
    R_true = R_tilt @ R_align
    s_true = float(rng.uniform(0.8, 1.6))
    t_true = rng.uniform(-1, 1, 3)
    hum_pts = ((kp_env.points - t_true) / s_true) @ R_true
    kp_hum = KeypointSet3D(hum_pts, np.ones(17))

    # character walking perpendicular to human gravity
    step = np.asarray(walk_step)
    step = step - np.dot(step, g_hum) * g_hum
    base_verts = rng.standard_normal((8, 3)) * 0.2 + hum_pts.mean(0)
    verts = np.stack([base_verts + i * step for i in range(walk_frames)])
    seq = CharacterSequence(vertices=verts, roots=verts.mean(axis=1))
    return dict(
        kp2d=kp2d, depth=depth, intr=intr, pose=pose, kp_hum=kp_hum,
        g_env=g_env, g_hum=g_hum, seq=seq, kp_env=kp_env,
        T_true=(s_true, R_true, t_true),
    )


class TestAlignHumanToEnv:
    def test_round_trip_recovers_env_positions(self, rng):
        sc = build_env_scene(rng, tilt_deg=0.0)
        T, seq_env = align_human_to_env(
            sc["kp2d"], sc["depth"], sc["intr"], sc["pose"], sc["kp_hum"],
            sc["g_env"], sc["g_hum"], sc["seq"],
        )
        recovered = T.apply(sc["kp_hum"].points)
        assert np.abs(recovered - sc["kp_env"].points).max() < 1e-6
        s_true, R_true, t_true = sc["T_true"]
        assert abs(T.scale - s_true) < 1e-9

    def test_zero_motion_root_static(self, rng):
        sc = build_env_scene(rng, tilt_deg=0.0, walk_step=(0.0, 0.0, 0.0))
        _, seq_env = align_human_to_env(
            sc["kp2d"], sc["depth"], sc["intr"], sc["pose"], sc["kp_hum"],
            sc["g_env"], sc["g_hum"], sc["seq"],
        )
        drift = np.abs(seq_env.roots - seq_env.roots[0]).max()
        assert drift < 1e-9

    def test_calibration_reduces_gravity_drift(self, rng):
        sc = build_env_scene(rng, tilt_deg=12.0, walk_frames=20, walk_step=(0.3, 0.0, 0.1))
        s_true, R_true, t_true = sc["T_true"]
        T_skewed = SimilarityTransform(s_true, R_true, t_true)
        before = apply_transform(sc["seq"], T_skewed)
        T, after = align_human_to_env(
            sc["kp2d"], sc["depth"], sc["intr"], sc["pose"], sc["kp_hum"],
            sc["g_env"], sc["g_hum"], sc["seq"],
        )
        g = sc["g_env"]

        def gravity_drift(roots):
            heights = roots @ g
            return float(heights.max() - heights.min())

        assert gravity_drift(after.roots) < gravity_drift(before.roots)
        assert gravity_drift(after.roots) < 1e-9
