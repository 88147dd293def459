"""Map and trajectory evaluation.

Detection metrics follow the standard protocol: predictions sorted by score
(capped at 1000), greedily matched to the unmatched ground-truth box of
highest volume IoU above the threshold, average precision as the all-point
interpolated area under the precision-recall curve, average recall as the
matched ground-truth fraction. Class-aware inputs are averaged over the
classes present in the ground truth. Trajectory metrics rigidly align the
estimate to the ground truth over the registered frames (no scaling) and
report median and RMSE of per-frame center distances and geodesic rotation
angles.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .averaging import GlobalPoses
from .geom import (
    OrientedBox3,
    SE3Pose,
    YawPose,
    iou3d,
    rotation_yaw,
    se3_align,
    transform_box,
    vertical_tilt,
)
from .tracks import ObjectTrack, SceneMap

DEFAULT_IOU_THRESHOLDS = (0.15, 0.25)
DEFAULT_MAX_DETECTIONS = 1000
_ALIGNMENT_TILT_LIMIT = 0.1  # rad; a gravity-consistent alignment never tilts this far

Prediction = tuple[OrientedBox3, float, int]  # box, score, class id
GroundTruthBox = tuple[OrientedBox3, int]  # box, class id


@dataclass
class MetricsReport:
    """Detection and localization metrics; unset fields stay None."""

    ap15: float | None = None
    ar15: float | None = None
    ap25: float | None = None
    ar25: float | None = None
    are_median_deg: float | None = None
    are_rmse_deg: float | None = None
    ate_median_cm: float | None = None
    ate_rmse_cm: float | None = None
    registration_rate: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, other: "MetricsReport") -> "MetricsReport":
        values = self.to_dict()
        for k, v in other.to_dict().items():
            if v is not None:
                values[k] = v
        return MetricsReport(**values)


def map_predictions(scene_map: SceneMap) -> list[Prediction]:
    """(box, score, label) triples of a map's tracks with representatives."""
    return [
        (t.representative_box, float(t.representative_score), int(t.label))
        for t in scene_map.tracks
        if t.representative_box is not None
    ]


def _greedy_ap_ar(
    predictions: Sequence[Prediction], gts: Sequence[OrientedBox3], threshold: float
) -> tuple[float, float]:
    n_gt = len(gts)
    if n_gt == 0:
        return 0.0, 0.0
    matched = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(len(predictions), dtype=bool)
    for p_idx, (box, _, _) in enumerate(predictions):
        best_g = -1
        best_iou = threshold
        for g_idx in range(n_gt):
            if matched[g_idx]:
                continue
            iou = iou3d(box, gts[g_idx])
            if iou >= best_iou and (best_g < 0 or iou > best_iou):
                best_g, best_iou = g_idx, iou
        if best_g >= 0:
            matched[best_g] = True
            tp[p_idx] = True
    if len(predictions) == 0:
        return 0.0, 0.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(predictions) + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_gt
    # All-point interpolation: integrate recall increments against the best
    # precision achieved at or beyond each recall level.
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for k in range(len(predictions)):
        if recall[k] > prev_r:
            ap += (recall[k] - prev_r) * interp[k]
            prev_r = recall[k]
    ar = float(matched.sum() / n_gt)
    return float(ap), ar


def evaluate_map(
    scene_map: SceneMap | Sequence[Prediction],
    gt_boxes: Sequence[GroundTruthBox],
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
    max_detections: int = DEFAULT_MAX_DETECTIONS,
) -> MetricsReport:
    """AP/AR of a predicted object map against ground-truth boxes.

    Accepts a SceneMap (un-posed maps must be aligned first, see
    :func:`align_map_to_gt`) or raw (box, score, class) triples. When every
    ground-truth class id is negative the evaluation is class-agnostic;
    otherwise AP/AR are averaged over the classes present in the ground truth.
    """
    if isinstance(scene_map, SceneMap):
        predictions = map_predictions(scene_map)
    else:
        predictions = list(scene_map)
    predictions = sorted(predictions, key=lambda p: -p[1])[:max_detections]

    gt_classes = sorted({c for _, c in gt_boxes})
    class_agnostic = all(c < 0 for c in gt_classes)

    results: dict[float, tuple[float, float]] = {}
    for threshold in iou_thresholds:
        if class_agnostic:
            results[threshold] = _greedy_ap_ar(
                predictions, [b for b, _ in gt_boxes], threshold
            )
        else:
            aps, ars = [], []
            for cls in gt_classes:
                cls_preds = [p for p in predictions if p[2] == cls]
                cls_gts = [b for b, c in gt_boxes if c == cls]
                ap, ar = _greedy_ap_ar(cls_preds, cls_gts, threshold)
                aps.append(ap)
                ars.append(ar)
            results[threshold] = (float(np.mean(aps)), float(np.mean(ars)))

    report = MetricsReport()
    for threshold, (ap, ar) in results.items():
        key = f"{int(round(threshold * 100))}"
        if hasattr(report, f"ap{key}"):
            setattr(report, f"ap{key}", ap)
            setattr(report, f"ar{key}", ar)
    return report


def alignment_to_gt(
    est: GlobalPoses, gt_poses: Mapping[int, SE3Pose]
) -> SE3Pose:
    """Rigid alignment (no scaling) of estimated camera centers onto ground
    truth over the registered frames."""
    common = sorted(set(est.registered) & set(gt_poses))
    if not common:
        raise ValueError("no registered frame has ground truth")
    return se3_align([est.poses[f] for f in common], [gt_poses[f] for f in common])


def evaluate_poses(
    est: GlobalPoses, gt_poses: Mapping[int, SE3Pose], total_frames: int
) -> MetricsReport:
    """Trajectory errors after rigid alignment plus the registration rate.

    ATE is the per-frame distance between aligned estimated and ground-truth
    camera centers (cm); ARE is the per-frame geodesic angle between aligned
    estimated and ground-truth rotations (degrees); both reported as median
    and RMSE over the registered frames with ground truth.
    """
    align = alignment_to_gt(est, gt_poses)
    common = sorted(set(est.registered) & set(gt_poses))
    trans_errors = []
    rot_errors = []
    for f in common:
        pose = est.poses[f]
        gt = gt_poses[f]
        trans_errors.append(float(np.linalg.norm(align.apply(pose.center) - gt.center)))
        rel = gt.rotation.T @ (align.rotation @ pose.rotation)
        angle = math.acos(min(1.0, max(-1.0, (np.trace(rel) - 1.0) / 2.0)))
        rot_errors.append(math.degrees(angle))
    trans = np.asarray(trans_errors)
    rots = np.asarray(rot_errors)
    return MetricsReport(
        are_median_deg=float(np.median(rots)),
        are_rmse_deg=float(np.sqrt(np.mean(rots**2))),
        ate_median_cm=float(np.median(trans) * 100.0),
        ate_rmse_cm=float(np.sqrt(np.mean(trans**2)) * 100.0),
        registration_rate=float(len(est.registered) / total_frames),
    )


def align_map_to_gt(
    scene_map: SceneMap, gt_poses: Mapping[int, SE3Pose]
) -> SceneMap:
    """Rigidly move an un-posed map into the ground-truth world frame.

    The alignment comes from the camera centers; because both worlds share the
    vertical axis the aligning rotation is a yaw up to estimation noise, and
    its yaw projection is applied to boxes and poses (keeping them
    gravity-consistent). A grossly tilted alignment reports an error instead.
    """
    align = alignment_to_gt(scene_map.poses, gt_poses)
    if vertical_tilt(align.rotation) > _ALIGNMENT_TILT_LIMIT:
        raise ValueError("alignment rotation is not gravity-consistent")
    yaw_align = YawPose(rotation_yaw(align.rotation), align.t)
    se3_yaw = yaw_align.to_se3()
    new_poses = {
        f: se3_yaw.compose(p) for f, p in scene_map.poses.poses.items()
    }
    new_tracks = []
    for t in scene_map.tracks:
        new_tracks.append(
            ObjectTrack(
                observations=list(t.observations),
                representative_box=None
                if t.representative_box is None
                else transform_box(t.representative_box, yaw_align),
                representative_score=t.representative_score,
                representative_observation=t.representative_observation,
                class_distribution=dict(t.class_distribution),
                label=t.label,
            )
        )
    return SceneMap(
        poses=GlobalPoses(new_poses, scene_map.poses.registered),
        tracks=tuple(new_tracks),
        provenance=dict(scene_map.provenance),
    )
