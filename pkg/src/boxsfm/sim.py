"""Synthetic scenes, trajectories, and noisy detections with full ground truth.

The simulator stands in for a neural 3D detector: it places disjoint boxes in
a room, walks a gravity-consistent camera through it, and renders per-frame
detections (camera-frame boxes, embeddings, scores, class ids) under a
configurable noise model, keeping the ground-truth object id and pose on every
record. All randomness comes from counter-based Philox streams keyed by the
given seeds (frame index is part of the key), so output is reproducible across
platforms and frames could be rendered in any order.

World convention: +Y points down (along gravity); the room floor is the y = 0
plane, the interior spans x in [0, extent_x], z in [0, extent_z] and
y in [-extent_y, 0]; cameras fly at a fixed height above the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PlacementFailure, TrajectoryFailure
from .geom import (
    CameraIntrinsics,
    OrientedBox3,
    SE3Pose,
    iou3d,
    project_camera_point,
    transform_box,
)
from .errors import BehindCamera
from .matching import Detection, FrameDetections

DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=525.0, fy=525.0, cx=320.0, cy=240.0, width=640, height=480
)
NEAR_DEPTH_M = 0.2
FAR_DEPTH_M = 15.0
_MAX_PLACEMENT_REJECTIONS = 10_000
_MAX_TRAJECTORY_FAILURES = 10_000
_CAMERA_HEIGHT_M = 1.5
_ROOM_MARGIN_M = 0.8


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic room."""

    n_objects: int = 30
    room_extent: tuple[float, float, float] = (8.0, 3.0, 8.0)
    dims_min: tuple[float, float, float] = (0.3, 0.3, 0.3)
    dims_max: tuple[float, float, float] = (1.2, 1.2, 1.2)
    n_classes: int = 10
    embedding_dim: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("n_objects must be >= 1")
        if any(e <= 0 for e in self.room_extent):
            raise ValueError("room extents must be positive")
        if any(lo > hi for lo, hi in zip(self.dims_min, self.dims_max)):
            raise ValueError("dims_min must not exceed dims_max")


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian perturbations plus dropout and spurious detections."""

    sigma_center_m: float = 0.0
    sigma_dims_m: float = 0.0
    sigma_yaw_rad: float = 0.0
    sigma_embedding: float = 0.0
    dropout_prob: float = 0.0
    spurious_rate: float = 0.0
    score_noise: float = 0.0

    def __post_init__(self):
        for name in ("sigma_center_m", "sigma_dims_m", "sigma_yaw_rad", "sigma_embedding", "spurious_rate", "score_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must be in [0, 1]")


NOISELESS = NoiseModel()
DESK_NOISE = NoiseModel(
    sigma_center_m=0.02,
    sigma_dims_m=0.02,
    sigma_yaw_rad=math.radians(2.0),
    sigma_embedding=0.1,
    dropout_prob=0.1,
    spurious_rate=0.5,
    score_noise=0.0,
)


@dataclass(frozen=True, eq=False)
class GroundTruthObject:
    box: OrientedBox3  # world frame
    class_id: int
    object_id: int
    embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class SceneContent:
    """A generated room: the spec plus its placed ground-truth objects."""

    spec: SceneSpec
    objects: tuple[GroundTruthObject, ...]


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Everything one simulated capture provides to the pipeline and tests."""

    content: SceneContent
    gt_poses: tuple[SE3Pose, ...]
    frames: tuple[FrameDetections, ...]

    @property
    def objects(self) -> tuple[GroundTruthObject, ...]:
        return self.content.objects


def generate_scene(spec: SceneSpec) -> SceneContent:
    """Place pairwise-disjoint objects uniformly in the room (rejection
    sampling), each with an independent random unit embedding.

    Raises:
        PlacementFailure: 10,000 rejected placements (room too crowded).
    """
    rng = np.random.Generator(np.random.Philox(key=spec.rng_seed))
    ex, ey, ez = spec.room_extent
    lo = np.asarray(spec.dims_min, dtype=float)
    hi = np.asarray(spec.dims_max, dtype=float)
    objects: list[GroundTruthObject] = []
    rejections = 0
    while len(objects) < spec.n_objects:
        dims = rng.uniform(lo, hi)
        half = dims / 2.0
        center = np.array(
            [
                rng.uniform(half[0], ex - half[0]),
                rng.uniform(-ey + half[1], -half[1]),
                rng.uniform(half[2], ez - half[2]),
            ]
        )
        yaw = rng.uniform(-math.pi, math.pi)
        box = OrientedBox3(center, dims, yaw)
        if any(iou3d(box, o.box) > 0.0 for o in objects):
            rejections += 1
            if rejections >= _MAX_PLACEMENT_REJECTIONS:
                raise PlacementFailure(
                    f"{rejections} rejected placements for {spec.n_objects} objects"
                )
            continue
        emb = rng.standard_normal(spec.embedding_dim)
        emb /= np.linalg.norm(emb)
        class_id = int(rng.integers(0, spec.n_classes)) if spec.n_classes > 0 else -1
        objects.append(
            GroundTruthObject(
                box=box, class_id=class_id, object_id=len(objects), embedding=emb
            )
        )
    return SceneContent(spec=spec, objects=tuple(objects))


def _visible_object_count(
    pose: SE3Pose, objects, intrinsics: CameraIntrinsics
) -> int:
    cam_from_world = pose.inverse()
    count = 0
    for obj in objects:
        if _center_visible(cam_from_world, obj.box.center, intrinsics):
            count += 1
    return count


def _center_visible(cam_from_world: SE3Pose, center, intrinsics) -> bool:
    p = cam_from_world.apply(center)
    if not (NEAR_DEPTH_M < p[2] < FAR_DEPTH_M):
        return False
    try:
        u, v = project_camera_point(intrinsics, p)
    except BehindCamera:
        return False
    return 0.0 <= u < intrinsics.width and 0.0 <= v < intrinsics.height


def generate_trajectory(
    scene: SceneContent,
    n_frames: int,
    seed: int,
    *,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
    min_visible: int = 4,
    height_m: float = _CAMERA_HEIGHT_M,
) -> list[SE3Pose]:
    """Gravity-consistent camera poses on a smoothed random walk.

    Positions follow a momentum random walk at a fixed height above the floor;
    each pose aims roughly at a random object and is resampled until it sees
    at least ``min_visible`` object centers. Poses are emitted pre-rectified
    (yaw-only rotations).

    Raises:
        TrajectoryFailure: the visibility constraint kept failing.
    """
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    rng = np.random.Generator(np.random.Philox(key=seed))
    ex, _, ez = scene.spec.room_extent
    margin = min(_ROOM_MARGIN_M, ex / 4.0, ez / 4.0)

    def clipped(p):
        return np.array(
            [
                min(max(p[0], margin), ex - margin),
                -height_m,
                min(max(p[2], margin), ez - margin),
            ]
        )

    pos = clipped(rng.uniform([0.0, 0.0, 0.0], [ex, 0.0, ez]))
    vel = np.zeros(3)
    poses: list[SE3Pose] = []
    failures = 0
    for _ in range(n_frames):
        placed = None
        for attempt in range(300):
            if attempt == 0:
                vel = 0.75 * vel + rng.normal(0.0, 0.25, 3) * np.array([1.0, 0.0, 1.0])
                cand = clipped(pos + vel)
            elif attempt < 150:
                cand = clipped(pos + rng.normal(0.0, 0.8, 3) * np.array([1.0, 0.0, 1.0]))
            else:
                cand = clipped(rng.uniform([0.0, 0.0, 0.0], [ex, 0.0, ez]))
            target = scene.objects[int(rng.integers(len(scene.objects)))].box.center
            yaw = math.atan2(target[0] - cand[0], target[2] - cand[2]) + rng.normal(0.0, 0.2)
            pose = SE3Pose.from_yaw(yaw, cand)
            if _visible_object_count(pose, scene.objects, intrinsics) >= min_visible:
                placed = pose
                pos = cand
                break
            failures += 1
            if failures >= _MAX_TRAJECTORY_FAILURES:
                raise TrajectoryFailure(
                    f"{failures} rejected poses; min_visible={min_visible} too strict?"
                )
        if placed is None:
            raise TrajectoryFailure("could not place a pose satisfying min_visible")
        poses.append(placed)
    return poses


def render_detections(
    scene: SceneContent,
    poses,
    noise: NoiseModel,
    seed: int,
    *,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
) -> list[FrameDetections]:
    """Per-frame noisy detections of the visible objects.

    An object is visible when its ground-truth center projects inside the
    image at a depth in (0.2, 15) m. Kept detections carry the ground-truth
    camera-frame box perturbed by the noise model, a renormalized noisy copy
    of the object embedding, and the true object id; spurious detections are
    random boxes in the viewing frustum with fresh embeddings and id -1.
    Frames are emitted pre-rectified (gravity along +Y exactly).
    """
    spec = scene.spec
    frames: list[FrameDetections] = []
    for frame_id, pose in enumerate(poses):
        rng = np.random.Generator(np.random.Philox(key=[seed, frame_id]))
        cam_from_world = pose.inverse()
        dets: list[Detection] = []
        for obj in scene.objects:
            if not _center_visible(cam_from_world, obj.box.center, intrinsics):
                continue
            if noise.dropout_prob > 0.0 and rng.random() < noise.dropout_prob:
                continue
            cam_box = transform_box(obj.box, cam_from_world)
            center = cam_box.center + noise.sigma_center_m * rng.standard_normal(3)
            dims = np.maximum(
                cam_box.dims + noise.sigma_dims_m * rng.standard_normal(3), 0.01
            )
            yaw = cam_box.yaw + noise.sigma_yaw_rad * rng.standard_normal()
            emb = obj.embedding + noise.sigma_embedding * rng.standard_normal(
                spec.embedding_dim
            )
            emb = emb / np.linalg.norm(emb)
            score = float(
                np.clip(1.0 - abs(rng.standard_normal()) * noise.score_noise, 0.05, 1.0)
            )
            dets.append(
                Detection(
                    box=OrientedBox3(center, dims, yaw),
                    embedding=emb,
                    score=score,
                    class_id=obj.class_id,
                    source_index=len(dets),
                    gt_object_id=obj.object_id,
                )
            )
        for _ in range(int(rng.poisson(noise.spurious_rate))):
            depth = rng.uniform(0.5, 8.0)
            u = rng.uniform(0.0, intrinsics.width)
            v = rng.uniform(0.0, intrinsics.height)
            center = np.array(
                [
                    (u - intrinsics.cx) * depth / intrinsics.fx,
                    (v - intrinsics.cy) * depth / intrinsics.fy,
                    depth,
                ]
            )
            dims = rng.uniform(spec.dims_min, spec.dims_max)
            emb = rng.standard_normal(spec.embedding_dim)
            emb /= np.linalg.norm(emb)
            dets.append(
                Detection(
                    box=OrientedBox3(center, dims, rng.uniform(-math.pi, math.pi)),
                    embedding=emb,
                    score=float(rng.uniform(0.05, 1.0)),
                    class_id=int(rng.integers(0, spec.n_classes)) if spec.n_classes > 0 else -1,
                    source_index=len(dets),
                    gt_object_id=-1,
                )
            )
        frames.append(
            FrameDetections(
                frame_id=frame_id,
                intrinsics=intrinsics,
                detections=tuple(dets),
                gt_pose=pose,
            )
        )
    return frames


def observed_object_ids(scene: SyntheticScene) -> set[int]:
    """Ids of objects whose center is visible in at least one capture frame.

    This is the ground-truth set a capture can be evaluated against: objects
    the trajectory never observes cannot appear in any map. Visibility matches
    the rendering rule and ignores detector dropout.
    """
    intrinsics = scene.frames[0].intrinsics if scene.frames else DEFAULT_INTRINSICS
    ids: set[int] = set()
    for pose in scene.gt_poses:
        cam_from_world = pose.inverse()
        for obj in scene.objects:
            if _center_visible(cam_from_world, obj.box.center, intrinsics):
                ids.add(obj.object_id)
    return ids


def simulate(
    spec: SceneSpec,
    n_frames: int,
    noise: NoiseModel = NOISELESS,
    *,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
    min_visible: int = 4,
) -> SyntheticScene:
    """Scene + trajectory + rendering in one call.

    The trajectory and rendering streams are keyed off ``spec.rng_seed`` (+1
    and +2) so one seed fully determines the capture.
    """
    content = generate_scene(spec)
    poses = generate_trajectory(
        content,
        n_frames,
        spec.rng_seed + 1,
        intrinsics=intrinsics,
        min_visible=min_visible,
    )
    frames = render_detections(
        content, poses, noise, spec.rng_seed + 2, intrinsics=intrinsics
    )
    return SyntheticScene(content=content, gt_poses=tuple(poses), frames=tuple(frames))
