"""Relative 4-DoF pose estimation between two frames with geometric verification.

A minimal sample is a pair of object matches. Every unordered pair is tested
(the match count per frame pair is small, so exhaustive enumeration is cheap
and deterministic): the sample's corner correspondences are rigidly aligned,
every object match is scored by a box reprojection error of
1 - IoU3D(reprojected box, matched box), and a sample verifies only if its own
boxes are inliers and at least half of all object matches are. The best sample
(lowest mean error over its inliers) wins; by default the pose is then refit
over the surviving corner correspondences.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput
from .geom import OrientedBox3, YawPose, box_corners, iou3d, kabsch_yaw, transform_box
from .matching import CornerMatch, FrameDetections, ObjectMatch

DEFAULT_MAX_BOX_ERROR = 0.75
DEFAULT_MIN_INLIER_RATIO = 0.5
DEFAULT_CORNER_INLIER_RADIUS_M = 0.10


@dataclass(frozen=True, eq=False)
class RelativePoseEstimate:
    """A verified relative pose (frame-a coords -> frame-b coords).

    Both inlier sets are non-empty (a pose whose own fitting corners all miss
    by more than the corner radius is not verified) and every corner inlier's
    parent object match is one of the object inliers.
    """

    pose: YawPose
    inlier_object_matches: tuple[ObjectMatch, ...]
    inlier_corner_matches: tuple[CornerMatch, ...]
    mean_matching_error: float

    def __post_init__(self):
        object.__setattr__(
            self, "inlier_object_matches", tuple(self.inlier_object_matches)
        )
        object.__setattr__(
            self, "inlier_corner_matches", tuple(self.inlier_corner_matches)
        )
        if not self.inlier_object_matches:
            raise ValueError("inlier object matches must be non-empty")
        if not self.inlier_corner_matches:
            raise ValueError("inlier corner matches must be non-empty")
        inlier_pairs = {(m.index_a, m.index_b) for m in self.inlier_object_matches}
        for cm in self.inlier_corner_matches:
            key = (cm.object_match.index_a, cm.object_match.index_b)
            if key not in inlier_pairs:
                raise ValueError("corner inlier parent is not an inlier object match")


def box_match_error(box_a: OrientedBox3, box_b: OrientedBox3, pose: YawPose) -> float:
    """1 - IoU3D of box_a reprojected into the other frame against box_b."""
    return 1.0 - iou3d(transform_box(box_a, pose), box_b)


def corner_inliers(
    a: FrameDetections,
    b: FrameDetections,
    corner_matches,
    pose: YawPose,
    radius_m: float = DEFAULT_CORNER_INLIER_RADIUS_M,
) -> list[CornerMatch]:
    """Corner matches whose transformed corner lands strictly closer than
    ``radius_m`` to its counterpart."""
    if radius_m <= 0.0:
        raise ValueError("radius_m must be positive")
    out = []
    for cm in corner_matches:
        pa = box_corners(a.detections[cm.object_match.index_a].box)[cm.corner_a]
        pb = box_corners(b.detections[cm.object_match.index_b].box)[cm.corner_b]
        if float(np.linalg.norm(pose.apply(pa) - pb)) < radius_m:
            out.append(cm)
    return out


def estimate_relative_pose(
    a: FrameDetections,
    b: FrameDetections,
    object_matches,
    corner_matches,
    *,
    max_box_error: float = DEFAULT_MAX_BOX_ERROR,
    min_inlier_ratio: float = DEFAULT_MIN_INLIER_RATIO,
    corner_inlier_radius_m: float = DEFAULT_CORNER_INLIER_RADIUS_M,
    refit_on_corner_inliers: bool = True,
    stats: dict | None = None,
) -> RelativePoseEstimate | None:
    """Estimate and verify the 4-DoF pose mapping frame-a coords to frame-b.

    Returns None (not an error) when fewer than two object matches exist or no
    minimal sample verifies. When ``refit_on_corner_inliers`` is set, the
    winning sample's pose is refit over its corner inliers; the refit is kept
    only if the verification conditions still hold under it. If ``stats`` is
    given, per-pair counters (samples evaluated, ...) are written into it.
    """
    matches = list(object_matches)
    n = len(matches)
    if stats is not None:
        stats["samples_evaluated"] = 0
    if n < 2:
        return None

    # Corner-correspondence point sets, grouped per object match.
    corners_by_match: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {
        i: [] for i in range(n)
    }
    cms_by_match: dict[int, list[CornerMatch]] = {i: [] for i in range(n)}
    match_pos = {(m.index_a, m.index_b): i for i, m in enumerate(matches)}
    for cm in corner_matches:
        pos = match_pos.get((cm.object_match.index_a, cm.object_match.index_b))
        if pos is None:
            continue
        pa = box_corners(a.detections[cm.object_match.index_a].box)[cm.corner_a]
        pb = box_corners(b.detections[cm.object_match.index_b].box)[cm.corner_b]
        corners_by_match[pos].append((pa, pb))
        cms_by_match[pos].append(cm)

    boxes_a = [a.detections[m.index_a].box for m in matches]
    boxes_b = [b.detections[m.index_b].box for m in matches]
    min_inliers = min_inlier_ratio * n

    def errors_under(pose: YawPose) -> list[float]:
        return [box_match_error(boxes_a[k], boxes_b[k], pose) for k in range(n)]

    best = None  # (mean_error, pose, inlier positions, errors)
    n_samples = 0
    for i, j in itertools.combinations(range(n), 2):
        n_samples += 1
        pairs = corners_by_match[i] + corners_by_match[j]
        if len(pairs) < 2:
            continue
        src = np.stack([p for p, _ in pairs])
        dst = np.stack([q for _, q in pairs])
        try:
            pose = kabsch_yaw(src, dst)
        except DegenerateInput:
            continue
        errors = errors_under(pose)
        if errors[i] >= max_box_error or errors[j] >= max_box_error:
            continue
        inliers = [k for k in range(n) if errors[k] < max_box_error]
        if len(inliers) < min_inliers:
            continue
        mean_error = sum(errors[k] for k in inliers) / len(inliers)
        # Strict < keeps the earlier sample on ties; samples are enumerated in
        # lexicographic order of the match list, which is ordered by index_a.
        if best is None or mean_error < best[0]:
            best = (mean_error, pose, inliers, (i, j))
    if stats is not None:
        stats["samples_evaluated"] = n_samples
    if best is None:
        return None

    mean_error, pose, inliers, sample = best
    if refit_on_corner_inliers:
        pairs = [p for k in inliers for p in corners_by_match[k]]
        kept = [
            (p, q)
            for p, q in pairs
            if float(np.linalg.norm(pose.apply(p) - q)) < corner_inlier_radius_m
        ]
        if len(kept) >= 2:
            try:
                refit = kabsch_yaw(
                    np.stack([p for p, _ in kept]), np.stack([q for _, q in kept])
                )
            except DegenerateInput:
                refit = None
            if refit is not None:
                errors = errors_under(refit)
                new_inliers = [k for k in range(n) if errors[k] < max_box_error]
                i, j = sample
                if (
                    i in new_inliers
                    and j in new_inliers
                    and len(new_inliers) >= min_inliers
                ):
                    pose = refit
                    inliers = new_inliers
                    mean_error = sum(errors[k] for k in new_inliers) / len(new_inliers)

    inlier_matches = tuple(matches[k] for k in inliers)
    corner_candidates = [cm for k in inliers for cm in cms_by_match[k]]
    inlier_corners = tuple(
        corner_inliers(a, b, corner_candidates, pose, corner_inlier_radius_m)
    )
    # The pose was fit on the winning sample's corners: if either sample
    # object keeps no corner within the inlier radius, the fit is a
    # compromise over inconsistent matches, not a verified pose.
    supported = {
        (cm.object_match.index_a, cm.object_match.index_b) for cm in inlier_corners
    }
    for k in sample:
        if (matches[k].index_a, matches[k].index_b) not in supported:
            return None
    return RelativePoseEstimate(pose, inlier_matches, inlier_corners, mean_error)
