import math

import numpy as np
import pytest

from boxsfm.errors import PlacementFailure, TrajectoryFailure
from boxsfm.geom import box_corners, iou3d, project_camera_point, transform_box
from boxsfm.matching import match_objects
from boxsfm.sim import (
    DEFAULT_INTRINSICS,
    DESK_NOISE,
    NOISELESS,
    NoiseModel,
    SceneSpec,
    generate_scene,
    generate_trajectory,
    render_detections,
    simulate,
)


class TestGenerateScene:
    def test_single_object_inside_room(self):
        spec = SceneSpec(n_objects=1, rng_seed=3)
        content = generate_scene(spec)
        assert len(content.objects) == 1
        corners = box_corners(content.objects[0].box)
        ex, ey, ez = spec.room_extent
        assert np.all(corners[:, 0] >= 0) and np.all(corners[:, 0] <= ex)
        assert np.all(corners[:, 1] >= -ey) and np.all(corners[:, 1] <= 0)
        assert np.all(corners[:, 2] >= 0) and np.all(corners[:, 2] <= ez)

    def test_same_seed_identical(self):
        a = generate_scene(SceneSpec(n_objects=10, rng_seed=11))
        b = generate_scene(SceneSpec(n_objects=10, rng_seed=11))
        for oa, ob in zip(a.objects, b.objects):
            assert np.array_equal(oa.box.center, ob.box.center)
            assert np.array_equal(oa.embedding, ob.embedding)
            assert oa.class_id == ob.class_id

    def test_thirty_objects_pairwise_disjoint(self):
        content = generate_scene(SceneSpec(n_objects=30, rng_seed=5))
        objs = content.objects
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                assert iou3d(objs[i].box, objs[j].box) == 0.0

    def test_crowded_room_fails(self):
        spec = SceneSpec(
            n_objects=60,
            room_extent=(2.0, 2.0, 2.0),
            dims_min=(0.9, 0.9, 0.9),
            dims_max=(1.0, 1.0, 1.0),
            rng_seed=1,
        )
        with pytest.raises(PlacementFailure):
            generate_scene(spec)


class TestGenerateTrajectory:
    def test_minimum_two_frames(self):
        content = generate_scene(SceneSpec(n_objects=12, rng_seed=7))
        with pytest.raises(ValueError):
            generate_trajectory(content, 1, seed=0)
        poses = generate_trajectory(content, 2, seed=0, min_visible=3)
        assert len(poses) == 2

    def test_same_seed_identical(self):
        content = generate_scene(SceneSpec(n_objects=12, rng_seed=7))
        a = generate_trajectory(content, 10, seed=4)
        b = generate_trajectory(content, 10, seed=4)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.rotation, pb.rotation)
            assert np.array_equal(pa.t, pb.t)

    def test_min_visible_satisfied(self):
        content = generate_scene(SceneSpec(n_objects=15, rng_seed=9))
        poses = generate_trajectory(content, 12, seed=2, min_visible=5)
        for pose in poses:
            inv = pose.inverse()
            count = 0
            for obj in content.objects:
                p = inv.apply(obj.box.center)
                if not (0.2 < p[2] < 15.0):
                    continue
                u, v = project_camera_point(DEFAULT_INTRINSICS, p)
                if 0 <= u < 640 and 0 <= v < 480:
                    count += 1
            assert count >= 5

    def test_poses_are_yaw_only_at_height(self):
        content = generate_scene(SceneSpec(n_objects=12, rng_seed=7))
        for pose in generate_trajectory(content, 8, seed=5):
            assert np.allclose(pose.rotation @ [0, 1, 0], [0, 1, 0], atol=1e-12)
            assert pose.center[1] == pytest.approx(-1.5)

    def test_impossible_visibility_fails(self):
        content = generate_scene(SceneSpec(n_objects=2, rng_seed=7))
        with pytest.raises(TrajectoryFailure):
            generate_trajectory(content, 4, seed=0, min_visible=10)


class TestRenderDetections:
    def test_zero_noise_detections_exact(self):
        scene = simulate(SceneSpec(n_objects=15, rng_seed=13), n_frames=6)
        for pose, frame in zip(scene.gt_poses, scene.frames):
            cam_from_world = pose.inverse()
            assert len(frame.detections) > 0
            for det in frame.detections:
                assert det.gt_object_id >= 0
                gt_box = scene.objects[det.gt_object_id].box
                expected = transform_box(gt_box, cam_from_world)
                assert np.allclose(det.box.center, expected.center, atol=1e-12)
                assert np.allclose(det.box.dims, expected.dims, atol=1e-12)
                assert det.box.yaw == pytest.approx(expected.yaw, abs=1e-12)
                assert det.score == 1.0

    def test_full_dropout_empties_frames(self):
        content = generate_scene(SceneSpec(n_objects=10, rng_seed=13))
        poses = generate_trajectory(content, 4, seed=1)
        frames = render_detections(content, poses, NoiseModel(dropout_prob=1.0), seed=2)
        assert all(len(f.detections) == 0 for f in frames)

    def test_center_noise_statistics(self):
        content = generate_scene(SceneSpec(n_objects=20, rng_seed=17))
        poses = generate_trajectory(content, 60, seed=3)
        frames = render_detections(
            content, poses, NoiseModel(sigma_center_m=0.02), seed=4
        )
        errors = []
        for pose, frame in zip(poses, frames):
            cam_from_world = pose.inverse()
            for det in frame.detections:
                gt = transform_box(scene_box(content, det), cam_from_world)
                errors.extend(det.box.center - gt.center)
        errors = np.asarray(errors)
        assert len(errors) > 1000
        assert abs(errors.std() - 0.02) / 0.02 < 0.10

    def test_spurious_marked(self):
        content = generate_scene(SceneSpec(n_objects=8, rng_seed=19))
        poses = generate_trajectory(content, 10, seed=5, min_visible=3)
        frames = render_detections(
            content, poses, NoiseModel(spurious_rate=2.0), seed=6
        )
        n_spurious = sum(
            1 for f in frames for d in f.detections if d.gt_object_id == -1
        )
        assert n_spurious > 0
        for f in frames:
            for idx, d in enumerate(f.detections):
                assert d.source_index == idx

    def test_same_seed_identical_frames(self):
        content = generate_scene(SceneSpec(n_objects=10, rng_seed=23))
        poses = generate_trajectory(content, 5, seed=7)
        fa = render_detections(content, poses, DESK_NOISE, seed=8)
        fb = render_detections(content, poses, DESK_NOISE, seed=8)
        for a, b in zip(fa, fb):
            assert len(a.detections) == len(b.detections)
            for da, db in zip(a.detections, b.detections):
                assert np.array_equal(da.box.center, db.box.center)
                assert np.array_equal(da.embedding, db.embedding)
                assert da.score == db.score

    def test_gravity_prerectified(self):
        scene = simulate(SceneSpec(n_objects=10, rng_seed=29), n_frames=3)
        for f in scene.frames:
            assert np.array_equal(f.gravity_dir_raw, [0.0, 1.0, 0.0])


def scene_box(content, det):
    return content.objects[det.gt_object_id].box


class TestMatcherOnSimulatorOutput:
    def test_noiseless_covisible_recovery(self):
        scene = simulate(SceneSpec(n_objects=20, rng_seed=31), n_frames=6)
        frames = scene.frames
        for i in range(len(frames)):
            for j in range(i + 1, len(frames)):
                matches = match_objects(frames[i], frames[j])
                gt_i = {d.gt_object_id: k for k, d in enumerate(frames[i].detections)}
                gt_j = {d.gt_object_id: k for k, d in enumerate(frames[j].detections)}
                covisible = set(gt_i) & set(gt_j)
                expected = {(gt_i[o], gt_j[o]) for o in covisible}
                got = {(m.index_a, m.index_b) for m in matches}
                # Every co-visible object matched to itself and nothing else.
                assert expected <= got
                for ia, ib in got - expected:
                    ga = frames[i].detections[ia].gt_object_id
                    gb = frames[j].detections[ib].gt_object_id
                    assert ga not in covisible and gb not in covisible
