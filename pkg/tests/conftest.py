import numpy as np

from boxsfm.geom import CameraIntrinsics, OrientedBox3
from boxsfm.matching import Detection, FrameDetections

TEST_INTRINSICS = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def random_box(rng, center_scale=2.0, dims_lo=0.4, dims_hi=2.0) -> OrientedBox3:
    return OrientedBox3(
        center=rng.uniform(-center_scale, center_scale, 3),
        dims=rng.uniform(dims_lo, dims_hi, 3),
        yaw=rng.uniform(-np.pi, np.pi),
    )


def overlapping_box_pair(rng) -> tuple[OrientedBox3, OrientedBox3]:
    """A random pair biased toward partial overlap (some end up disjoint)."""
    a = random_box(rng)
    b = OrientedBox3(
        center=a.center + rng.normal(0.0, 0.7, 3),
        dims=rng.uniform(0.4, 2.0, 3),
        yaw=rng.uniform(-np.pi, np.pi),
    )
    return a, b


def random_unit_embeddings(rng, n, dim=32) -> np.ndarray:
    e = rng.normal(size=(n, dim))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def make_frame(frame_id, boxes, embeddings, scores=None, class_ids=None, gt_pose=None, gt_object_ids=None):
    n = len(boxes)
    scores = [1.0] * n if scores is None else scores
    class_ids = [-1] * n if class_ids is None else class_ids
    gt_object_ids = [None] * n if gt_object_ids is None else gt_object_ids
    dets = tuple(
        Detection(
            box=boxes[i],
            embedding=embeddings[i],
            score=scores[i],
            class_id=class_ids[i],
            source_index=i,
            gt_object_id=gt_object_ids[i],
        )
        for i in range(n)
    )
    return FrameDetections(
        frame_id=frame_id, intrinsics=TEST_INTRINSICS, detections=dets, gt_pose=gt_pose
    )
