import numpy as np
import pytest

from worldguide.camera import (
    DEFAULT_FRAME_COUNT,
    RESOLUTION_BUCKETS,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    PointCloud,
    compose,
    invert,
    pick_resolution_bucket,
    plucker_map,
    project,
    random_pose,
    unproject,
)
from worldguide.errors import DimensionMismatch

from conftest import make_depth


def make_intr(w=64, h=48, fx=90.0, fy=85.0):
    return CameraIntrinsics(fx=fx, fy=fy, cx=w / 2, cy=h / 2, width=w, height=h)


class TestTypes:
    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1, fy=1, cx=1, cy=1, width=4, height=4)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=1, fy=1, cx=10, cy=1, width=4, height=4)

    def test_pose_validation(self):
        with pytest.raises(ValueError):
            CameraPose(np.eye(3) * 2.0, np.zeros(3))
        with pytest.raises(ValueError):
            CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # det -1

    def test_depth_validation(self):
        with pytest.raises(ValueError):
            DepthMap(np.array([[1.0, -2.0]]), np.array([[True, True]]))
        # invalid entries may hold anything
        DepthMap(np.array([[1.0, -2.0]]), np.array([[True, False]]))

    def test_cloud_validation(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((2, 3)), np.full((2, 3), 1.5))
        with pytest.raises(DimensionMismatch):
            PointCloud(np.zeros((2, 3)), np.zeros((3, 3)))


class TestUnproject:
    def test_principal_point_on_axis(self):
        intr = make_intr()
        depth = DepthMap.from_values(np.full((48, 64), 1.0))
        img = np.zeros((48, 64, 3))
        cloud = unproject(depth, intr, CameraPose.identity(), img)
        idx = np.flatnonzero(
            (cloud.source_pixel[:, 0] == 32) & (cloud.source_pixel[:, 1] == 24)
        )[0]
        np.testing.assert_allclose(cloud.positions[idx], [0.0, 0.0, 1.0], atol=1e-12)

    def test_one_focal_length_off_axis(self):
        # pixel (cx + fx, cy) at depth 2 lands one unit right per unit depth
        intr = CameraIntrinsics(fx=20.0, fy=20.0, cx=10.0, cy=12.0, width=64, height=48)
        depth = DepthMap.from_values(np.full((48, 64), 2.0))
        cloud = unproject(depth, intr, CameraPose.identity(), np.zeros((48, 64, 3)))
        idx = np.flatnonzero(
            (cloud.source_pixel[:, 0] == 30) & (cloud.source_pixel[:, 1] == 12)
        )[0]
        np.testing.assert_allclose(cloud.positions[idx], [2.0, 0.0, 2.0], atol=1e-12)

    def test_empty_mask_gives_empty_cloud(self):
        intr = make_intr(8, 8)
        depth = DepthMap(np.zeros((8, 8)), np.zeros((8, 8), bool))
        cloud = unproject(depth, intr, CameraPose.identity(), np.zeros((8, 8, 3)))
        assert len(cloud) == 0

    def test_dimension_mismatch(self):
        intr = make_intr(8, 8)
        depth = DepthMap.from_values(np.ones((4, 4)))
        with pytest.raises(DimensionMismatch):
            unproject(depth, intr, CameraPose.identity(), np.zeros((4, 4, 3)))

    def test_round_trip_random_pose(self, rng):
        intr = make_intr(8, 8, fx=11.0, fy=13.0)
        depth = make_depth(rng, 8, 8)
        pose = random_pose(rng)
        cloud = unproject(depth, intr, pose, rng.random((8, 8, 3)))
        proj = project(cloud, intr, pose)
        err = np.abs(proj.pixels - cloud.source_pixel)
        assert err.max() < 1e-6
        src_depth = depth.values[depth.valid]
        assert np.abs(proj.depths / src_depth - 1.0).max() < 1e-9
        assert proj.visible.all()


class TestProject:
    def test_on_axis_point(self):
        intr = make_intr()
        cloud = PointCloud(np.array([[0.0, 0.0, 1.0]]), np.zeros((1, 3)))
        proj = project(cloud, intr, CameraPose.identity())
        np.testing.assert_allclose(proj.pixels[0], [32.0, 24.0], atol=1e-12)
        assert proj.depths[0] == 1.0
        assert proj.visible[0]

    def test_behind_camera_not_visible(self):
        intr = make_intr()
        cloud = PointCloud(np.array([[0.0, 0.0, -1.0]]), np.zeros((1, 3)))
        proj = project(cloud, intr, CameraPose.identity())
        assert not proj.visible[0]
        assert np.all(np.isfinite(proj.pixels[0]))  # coordinates still reported

    def test_outside_image_not_visible(self):
        intr = make_intr()
        cloud = PointCloud(np.array([[100.0, 0.0, 1.0]]), np.zeros((1, 3)))
        proj = project(cloud, intr, CameraPose.identity())
        assert not proj.visible[0]


class TestPoseAlgebra:
    def test_invert_identity(self):
        inv = invert(CameraPose.identity())
        np.testing.assert_array_equal(inv.rotation, np.eye(3))
        np.testing.assert_array_equal(inv.center, np.zeros(3))

    def test_compose_with_inverse(self, rng):
        for _ in range(20):
            a = random_pose(rng)
            ident = compose(a, invert(a))
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-9
            assert np.abs(ident.center).max() < 1e-9

    def test_associativity(self, rng):
        for _ in range(20):
            a, b, c = (random_pose(rng) for _ in range(3))
            lhs = compose(compose(a, b), c)
            rhs = compose(a, compose(b, c))
            assert np.abs(lhs.rotation - rhs.rotation).max() < 1e-9
            assert np.abs(lhs.center - rhs.center).max() < 1e-9

    def test_pose_invariance_of_unprojection(self, rng):
        # transforming unprojected points equals unprojecting with the composed pose
        intr = make_intr(8, 8)
        depth = make_depth(rng, 8, 8)
        img = rng.random((8, 8, 3))
        P = random_pose(rng)
        T = random_pose(rng)
        base = unproject(depth, intr, P, img)
        moved = base.positions @ T.rotation.T + T.center
        composed = unproject(depth, intr, compose(T, P), img)
        assert np.abs(moved - composed.positions).max() < 1e-9


class TestPlucker:
    def test_identity_center_pixel(self):
        intr = make_intr()
        pm = plucker_map(intr, CameraPose.identity())
        np.testing.assert_allclose(pm.direction[:, 24, 32], [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(pm.moment[:, 24, 32], 0.0, atol=1e-12)

    def test_center_at_origin_zero_moments(self, rng):
        intr = make_intr(16, 16)
        pose = CameraPose(random_pose(rng).rotation, np.zeros(3))
        pm = plucker_map(intr, pose)
        assert np.abs(pm.moment).max() < 1e-12

    def test_hand_computed_moment(self):
        # center (1,0,0), principal ray d=(0,0,1): m = c x d = (0,-1,0)
        intr = make_intr()
        pose = CameraPose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        pm = plucker_map(intr, pose)
        np.testing.assert_allclose(pm.moment[:, 24, 32], [0.0, -1.0, 0.0], atol=1e-12)

    def test_invariants_random_pose(self, rng):
        intr = make_intr(32, 20)
        for _ in range(5):
            pm = plucker_map(intr, random_pose(rng))
            d = pm.direction.reshape(3, -1)
            m = pm.moment.reshape(3, -1)
            assert np.abs(np.linalg.norm(d, axis=0) - 1.0).max() < 1e-6
            assert np.abs((d * m).sum(axis=0)).max() < 1e-6


class TestResolutionBuckets:
    def test_bucket_constants(self):
        assert RESOLUTION_BUCKETS == ((768, 480), (720, 512), (608, 608), (512, 720), (480, 768))
        assert DEFAULT_FRAME_COUNT == 81

    @pytest.mark.parametrize(
        "w,h,expected",
        [
            (1024, 1024, (608, 608)),
            (1920, 1200, (768, 480)),
            (1200, 1920, (480, 768)),
            (768, 480, (768, 480)),
            (700, 500, (720, 512)),
        ],
    )
    def test_selection(self, w, h, expected):
        assert pick_resolution_bucket(w, h) == expected

    def test_scale_invariance(self, rng):
        for _ in range(50):
            w = int(rng.integers(2, 4000))
            h = int(rng.integers(2, 4000))
            assert pick_resolution_bucket(w, h) == pick_resolution_bucket(2 * w, 2 * h)
