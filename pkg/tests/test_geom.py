import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxsfm.errors import BehindCamera, DegenerateInput, NonGravityPose
from boxsfm.geom import (
    CameraIntrinsics,
    OrientedBox3,
    SE3Pose,
    YawPose,
    box_corners,
    giou3d,
    gravity_rectification,
    iou3d,
    kabsch_yaw,
    project_point,
    rot_y,
    se3_align,
    transform_box,
    wrap_angle,
)
from conftest import overlapping_box_pair, random_box
from oracles import grid_min_alignment_residual, monte_carlo_iou3d


def unit_cube(center=(0, 0, 0), yaw=0.0) -> OrientedBox3:
    return OrientedBox3(np.asarray(center, dtype=float), np.ones(3), yaw)


class TestWrapAngle:
    def test_boundaries(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)

    @given(st.floats(-50.0, 50.0))
    def test_range_and_equivalence(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


class TestBoxCorners:
    def test_unit_cube_identity(self):
        corners = box_corners(unit_cube())
        expected = {
            tuple(s) for s in np.array(np.meshgrid([0.5, -0.5], [0.5, -0.5], [0.5, -0.5])).T.reshape(-1, 3)
        }
        assert {tuple(c) for c in corners} == expected

    def test_translated_cube_corner0(self):
        box = OrientedBox3(np.array([1.0, 0.0, 0.0]), np.array([2.0, 2.0, 2.0]), 0.0)
        # Corner 0 carries the (+,+,+) sign pattern.
        assert np.allclose(box_corners(box)[0], [2.0, 1.0, 1.0])

    def test_quarter_turn_cube_is_corner_permutation(self):
        base = box_corners(unit_cube())
        turned = box_corners(unit_cube(yaw=math.pi / 2))
        # Derived oracle: rotate the yaw-0 corners by the quarter turn directly.
        rotated = base @ rot_y(math.pi / 2).T
        for c in turned:
            assert np.min(np.linalg.norm(rotated - c, axis=1)) < 1e-12
        # As a set, a cube's corners are invariant under the quarter turn.
        for c in turned:
            assert np.min(np.linalg.norm(base - c, axis=1)) < 1e-12


class TestIou3d:
    def test_identical_boxes(self):
        rng = np.random.Generator(np.random.Philox(key=1))
        for _ in range(20):
            box = random_box(rng)
            assert iou3d(box, box) == 1.0

    def test_half_offset_unit_cubes(self):
        a = unit_cube()
        b = unit_cube(center=(0.5, 0.0, 0.0))
        # Analytic: intersection 0.5, union 1.5.
        assert iou3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_disjoint_is_exactly_zero(self):
        a = unit_cube()
        assert iou3d(a, unit_cube(center=(3.0, 0.0, 0.0))) == 0.0
        assert iou3d(a, unit_cube(center=(0.0, 3.0, 0.0))) == 0.0

    def test_symmetry_and_range(self):
        rng = np.random.Generator(np.random.Philox(key=2))
        for _ in range(100):
            a, b = overlapping_box_pair(rng)
            v = iou3d(a, b)
            assert 0.0 <= v <= 1.0
            assert v == pytest.approx(iou3d(b, a), abs=1e-12)

    def test_yawed_overlap_matches_monte_carlo(self):
        rng = np.random.Generator(np.random.Philox(key=3))
        for i in range(20):
            a, b = overlapping_box_pair(rng)
            mc = monte_carlo_iou3d(a, b, n_samples=1_000_000, seed=100 + i)
            assert iou3d(a, b) == pytest.approx(mc, abs=1e-2)


class TestGiou3d:
    def test_identical_boxes(self):
        box = unit_cube(yaw=0.3)
        assert giou3d(box, box) == pytest.approx(1.0, abs=1e-12)

    def test_far_apart_approaches_minus_one(self):
        a = unit_cube()
        b = unit_cube(center=(100.0, 0.0, 0.0))
        assert giou3d(a, b) < -0.9

    def test_half_offset_unit_cubes_hull_equals_union(self):
        a = unit_cube()
        b = unit_cube(center=(0.5, 0.0, 0.0))
        # Hull of the two footprints is the 1.5 x 1 rectangle = union volume.
        assert giou3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_never_exceeds_iou(self):
        rng = np.random.Generator(np.random.Philox(key=4))
        for _ in range(200):
            a, b = overlapping_box_pair(rng)
            assert giou3d(a, b) <= iou3d(a, b) + 1e-12
            assert -1.0 < giou3d(a, b) <= 1.0


class TestKabschYaw:
    def test_identity(self):
        rng = np.random.Generator(np.random.Philox(key=5))
        pts = rng.normal(size=(8, 3))
        pose = kabsch_yaw(pts, pts)
        assert pose.yaw == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(pose.t, 0.0, atol=1e-12)

    def test_pure_translation(self):
        rng = np.random.Generator(np.random.Philox(key=6))
        pts = rng.normal(size=(5, 3))
        pose = kabsch_yaw(pts, pts + np.array([1.0, 2.0, 3.0]))
        assert pose.yaw == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(pose.t, [1.0, 2.0, 3.0], atol=1e-12)

    def test_recovers_random_transforms(self):
        rng = np.random.Generator(np.random.Philox(key=7))
        for _ in range(300):
            pts = rng.normal(size=(16, 3))
            yaw = rng.uniform(-math.pi, math.pi)
            t = rng.normal(size=3)
            moved = pts @ rot_y(yaw).T + t
            pose = kabsch_yaw(pts, moved)
            assert abs(wrap_angle(pose.yaw - yaw)) < 1e-9
            assert np.allclose(pose.t, t, atol=1e-9)

    def test_recovers_yaws_near_pi(self):
        rng = np.random.Generator(np.random.Philox(key=8))
        for sign in (1.0, -1.0):
            for eps in (0.0, 1e-3, 1e-7):
                pts = rng.normal(size=(10, 3))
                yaw = sign * (math.pi - eps)
                moved = pts @ rot_y(yaw).T
                pose = kabsch_yaw(pts, moved)
                assert abs(wrap_angle(pose.yaw - yaw)) < 1e-9

    def test_vertical_only_spread_is_degenerate(self):
        src = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 2.0, 0.0]])
        with pytest.raises(DegenerateInput):
            kabsch_yaw(src, src)

    def test_single_point_is_degenerate(self):
        with pytest.raises(DegenerateInput):
            kabsch_yaw(np.ones((1, 3)), np.ones((1, 3)))


class TestTransformBox:
    def test_identity(self):
        box = unit_cube(center=(1.0, 2.0, 3.0), yaw=0.5)
        out = transform_box(box, YawPose.identity())
        assert np.allclose(out.center, box.center)
        assert out.yaw == pytest.approx(box.yaw)

    def test_half_turn(self):
        box = unit_cube(center=(1.0, 0.0, 0.0))
        out = transform_box(box, YawPose(math.pi, np.zeros(3)))
        # R_y(pi) @ (1,0,0) = (-1,0,0), yaw goes to pi.
        assert np.allclose(out.center, [-1.0, 0.0, 0.0], atol=1e-12)
        assert out.yaw == pytest.approx(math.pi)

    def test_corner_transform_consistency(self):
        rng = np.random.Generator(np.random.Philox(key=9))
        for _ in range(1000):
            box = random_box(rng)
            pose = YawPose(rng.uniform(-math.pi, math.pi), rng.normal(size=3))
            direct = box_corners(transform_box(box, pose))
            via_points = pose.apply(box_corners(box))
            assert np.allclose(direct, via_points, atol=1e-9)

    def test_se3_path_matches_yaw_path(self):
        box = unit_cube(center=(0.5, -0.2, 1.0), yaw=0.3)
        pose = YawPose(1.1, np.array([0.1, 0.2, 0.3]))
        a = transform_box(box, pose)
        b = transform_box(box, pose.to_se3())
        assert np.allclose(a.center, b.center)
        assert a.yaw == pytest.approx(b.yaw)

    def test_tilted_pose_rejected(self):
        tilt = SE3Pose(
            np.array([[1.0, 0.0, 0.0], [0.0, math.cos(1e-3), -math.sin(1e-3)], [0.0, math.sin(1e-3), math.cos(1e-3)]]),
            np.zeros(3),
        )
        with pytest.raises(NonGravityPose):
            transform_box(unit_cube(), tilt)


def random_se3(rng) -> SE3Pose:
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return SE3Pose(q, rng.normal(size=3))


def random_yaw_poses(rng, n) -> list[SE3Pose]:
    return [
        SE3Pose.from_yaw(rng.uniform(-math.pi, math.pi), rng.uniform(-4, 4, 3))
        for _ in range(n)
    ]


class TestSe3Align:
    def test_identity(self):
        rng = np.random.Generator(np.random.Philox(key=10))
        poses = random_yaw_poses(rng, 6)
        out = se3_align(poses, poses)
        assert np.allclose(out.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(out.t, 0.0, atol=1e-9)

    def test_recovers_rigid_transform(self):
        rng = np.random.Generator(np.random.Philox(key=11))
        for _ in range(100):
            src = random_yaw_poses(rng, 8)
            a = random_se3(rng)
            dst = [SE3Pose(a.rotation @ p.rotation, a.apply(p.t)) for p in src]
            out = se3_align(src, dst)
            assert np.allclose(out.rotation, a.rotation, atol=1e-9)
            assert np.allclose(out.t, a.t, atol=1e-9)

    def test_invariant_to_common_transform(self):
        rng = np.random.Generator(np.random.Philox(key=12))
        src = random_yaw_poses(rng, 7)
        dst = random_yaw_poses(rng, 7)
        base = se3_align(src, dst)
        g = random_se3(rng)
        src_g = [SE3Pose(g.rotation @ p.rotation, g.apply(p.t)) for p in src]
        dst_g = [SE3Pose(g.rotation @ p.rotation, g.apply(p.t)) for p in dst]
        moved = se3_align(src_g, dst_g)
        # Aligning both moved sets must give g o base o g^-1.
        expected = g.compose(base).compose(g.inverse())
        assert np.allclose(moved.rotation, expected.rotation, atol=1e-8)
        assert np.allclose(moved.t, expected.t, atol=1e-8)

    def test_collinear_centers_still_optimal(self):
        rng = np.random.Generator(np.random.Philox(key=13))
        src_centers = np.outer(np.linspace(0.0, 3.0, 5), np.array([1.0, 0.2, -0.5]))
        dst_centers = src_centers @ rot_y(0.9).T + np.array([0.3, -1.0, 2.0])
        dst_centers += rng.normal(0.0, 0.01, dst_centers.shape)
        src = [SE3Pose(np.eye(3), c) for c in src_centers]
        dst = [SE3Pose(np.eye(3), c) for c in dst_centers]
        out = se3_align(src, dst)
        res = float(np.sum((out.apply(src_centers) - dst_centers) ** 2))
        grid_best = grid_min_alignment_residual(src_centers, dst_centers, steps=20)
        assert res <= grid_best + 1e-9

    def test_empty_raises(self):
        with pytest.raises(DegenerateInput):
            se3_align([], [])


class TestProjectPoint:
    K = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)

    def test_optical_axis(self):
        uv = project_point(self.K, SE3Pose.identity(), np.array([0.0, 0.0, 1.0]))
        assert uv == pytest.approx((50.0, 50.0))

    def test_hand_arithmetic(self):
        uv = project_point(self.K, SE3Pose.identity(), np.array([0.1, 0.2, 1.0]))
        assert uv == pytest.approx((60.0, 70.0))

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project_point(self.K, SE3Pose.identity(), np.array([0.0, 0.0, -1.0]))

    def test_posed_camera(self):
        pose = SE3Pose.from_yaw(math.pi / 2, np.array([1.0, 0.0, 0.0]))
        # Camera forward in world is R_y(pi/2) @ e_z = e_x.
        uv = project_point(self.K, pose, np.array([3.0, 0.0, 0.0]))
        assert uv == pytest.approx((50.0, 50.0))


class TestGravityRectification:
    def test_already_rectified(self):
        r = gravity_rectification(np.array([0.0, 1.0, 0.0]))
        assert np.allclose(r.rotation, np.eye(3))

    def test_maps_gravity_to_vertical(self):
        rng = np.random.Generator(np.random.Philox(key=14))
        for _ in range(50):
            g = rng.normal(size=3)
            g /= np.linalg.norm(g)
            r = gravity_rectification(g)
            assert np.allclose(r.rotation @ g, [0.0, 1.0, 0.0], atol=1e-9)

    def test_antiparallel(self):
        r = gravity_rectification(np.array([0.0, -1.0, 0.0]))
        assert np.allclose(r.rotation @ np.array([0.0, -1.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            gravity_rectification(np.array([0.0, 2.0, 0.0]))


class TestInvariants:
    def test_box_yaw_normalized(self):
        box = OrientedBox3(np.zeros(3), np.ones(3), 5.0)
        assert -math.pi < box.yaw <= math.pi

    def test_box_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            OrientedBox3(np.zeros(3), np.array([1.0, 0.0, 1.0]), 0.0)

    def test_se3_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            SE3Pose(np.eye(3) * 2.0, np.zeros(3))

    def test_arrays_are_frozen(self):
        box = OrientedBox3(np.zeros(3), np.ones(3), 0.0)
        with pytest.raises(ValueError):
            box.center[0] = 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_iou_of_shifted_self_below_one(self, seed):
        rng = np.random.Generator(np.random.Philox(key=seed))
        box = random_box(rng)
        shifted = OrientedBox3(box.center + np.array([0.05, 0.0, 0.0]), box.dims, box.yaw)
        assert iou3d(box, shifted) < 1.0
