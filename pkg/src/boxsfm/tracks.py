"""Object tracks: establishment, representatives, classes, merging, point tracks.

A track is one physical object: the connected component, under union-find,
of (frame, detection) nodes linked by surviving inlier object matches.
Unmatched detections of registered frames become singleton tracks. Each track
lifts its observations into the world frame, elects a representative box, and
aggregates a score-weighted class distribution. Duplicate tracks that the
match graph failed to connect are merged (or the weaker one suppressed) by a
pose-aware affinity, and per-corner point tracks link the representative box
corners to every observation for the later reprojection refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .averaging import GlobalPoses
from .geom import OrientedBox3, SE3Pose, giou3d, iou3d, transform_box
from .matching import CornerMatch, FrameDetections

DEFAULT_MERGE_GATE_GIOU = -0.6
DEFAULT_MERGE_AFFINITY = 0.25
DEFAULT_SUPPRESS_IOU = 0.15

Observation = tuple[int, int]  # (frame_id, detection index)
MatchScores = Mapping[tuple[Observation, Observation], float]


@dataclass
class ObjectTrack:
    """Multi-view identity of one object.

    ``observations`` holds (frame_id, detection index) pairs, at most one per
    frame; representative fields are filled by :func:`select_representative`
    and :func:`class_distribution`.
    """

    observations: list[Observation]
    representative_box: OrientedBox3 | None = None
    representative_score: float = 0.0
    representative_observation: Observation | None = None
    class_distribution: dict[int, float] = field(default_factory=dict)
    label: int = -1


@dataclass(frozen=True)
class PointTrack:
    """All observed corners identified with one representative-box corner."""

    rep_corner_index: int
    members: tuple[tuple[int, int, int], ...]  # (frame_id, detection, corner)


@dataclass(frozen=True, eq=False)
class SceneMap:
    """The pipeline output: registered poses plus the global object tracks."""

    poses: GlobalPoses
    tracks: tuple[ObjectTrack, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        registered = self.poses.registered
        for t in self.tracks:
            for frame_id, _ in t.observations:
                if frame_id not in registered:
                    raise ValueError(
                        f"track observes unregistered frame {frame_id}"
                    )


class DisjointSet:
    """Union-find with path compression and union by size."""

    def __init__(self):
        self._parent: dict = {}
        self._size: dict = {}

    def add(self, x) -> None:
        if x not in self._parent:
            self._parent[x] = x
            self._size[x] = 1

    def find(self, x):
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def union(self, a, b) -> None:
        self.add(a)
        self.add(b)
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]

    def members(self):
        return self._parent.keys()


def establish_tracks(
    edge_matches: Mapping[tuple[int, int], Sequence],
    frames: Mapping[int, FrameDetections],
    registered,
) -> list[ObjectTrack]:
    """Connected components of detections under the surviving inlier matches.

    ``edge_matches`` maps a frame pair (i, j) to its inlier object matches
    (indices into the two frames' detection lists). Every detection of a
    registered frame lands in exactly one track; detections never matched
    become singleton tracks. Should inconsistent matches place two detections
    of one frame in a component, only the highest-scoring one stays and the
    others are split off as singletons, keeping the per-frame-uniqueness
    invariant and the partition property.
    """
    registered = set(registered)
    dsu = DisjointSet()
    for frame_id in sorted(registered):
        for det_idx in range(len(frames[frame_id].detections)):
            dsu.add((frame_id, det_idx))
    for (i, j) in sorted(edge_matches):
        if i not in registered or j not in registered:
            continue
        for m in edge_matches[(i, j)]:
            dsu.union((i, m.index_a), (j, m.index_b))

    groups: dict = {}
    for node in sorted(dsu.members()):
        groups.setdefault(dsu.find(node), []).append(node)

    tracks: list[ObjectTrack] = []
    leftovers: list[Observation] = []
    for root in sorted(groups):
        obs = sorted(groups[root])
        per_frame: dict[int, Observation] = {}
        for frame_id, det_idx in obs:
            cur = per_frame.get(frame_id)
            if cur is None:
                per_frame[frame_id] = (frame_id, det_idx)
                continue
            cur_score = frames[frame_id].detections[cur[1]].score
            new_score = frames[frame_id].detections[det_idx].score
            if new_score > cur_score:
                leftovers.append(cur)
                per_frame[frame_id] = (frame_id, det_idx)
            else:
                leftovers.append((frame_id, det_idx))
        tracks.append(ObjectTrack(observations=sorted(per_frame.values())))
    tracks.extend(ObjectTrack(observations=[obs]) for obs in sorted(leftovers))
    return tracks


def lift_observation(
    obs: Observation,
    poses: Mapping[int, SE3Pose],
    frames: Mapping[int, FrameDetections],
) -> OrientedBox3:
    """Detection box transformed into the world frame by its camera pose."""
    frame_id, det_idx = obs
    return transform_box(frames[frame_id].detections[det_idx].box, poses[frame_id])


def select_representative(
    track: ObjectTrack,
    poses: Mapping[int, SE3Pose],
    frames: Mapping[int, FrameDetections],
) -> tuple[Observation, OrientedBox3, float]:
    """The observation maximizing sqrt(mean mutual IoU x detection score).

    Observations are lifted to the world frame; each one's mutual IoU is its
    mean overlap with every other lifted box (1 for singleton tracks, so the
    criterion falls back to the detection score alone). Returns the winning
    observation, its lifted box, and the criterion value.
    """
    if not track.observations:
        raise ValueError("track has no observations")
    lifted = [lift_observation(o, poses, frames) for o in track.observations]
    scores = [
        frames[f].detections[d].score for f, d in track.observations
    ]
    n = len(lifted)
    best = None
    for i in range(n):
        if n == 1:
            mutual = 1.0
        else:
            mutual = sum(iou3d(lifted[i], lifted[j]) for j in range(n) if j != i) / (n - 1)
        criterion = math.sqrt(mutual * scores[i])
        if best is None or criterion > best[2]:
            best = (track.observations[i], lifted[i], criterion)
    return best


def representative_box(
    track: ObjectTrack,
    poses: Mapping[int, SE3Pose],
    frames: Mapping[int, FrameDetections],
) -> tuple[OrientedBox3, float]:
    """The representative lifted box and its selection criterion value."""
    _, box, score = select_representative(track, poses, frames)
    return box, score


def class_distribution(
    track: ObjectTrack, frames: Mapping[int, FrameDetections]
) -> tuple[dict[int, float], int]:
    """Score-weighted class distribution and its argmax label.

    Class-agnostic observations (class_id < 0) are ignored; if no observation
    carries a class, returns ({}, -1). Label ties break toward the smaller
    class id.
    """
    weights: dict[int, float] = {}
    for frame_id, det_idx in track.observations:
        det = frames[frame_id].detections[det_idx]
        if det.class_id < 0:
            continue
        weights[det.class_id] = weights.get(det.class_id, 0.0) + det.score
    total = sum(weights.values())
    if total <= 0.0:
        return {}, -1
    dist = {c: w / total for c, w in sorted(weights.items())}
    label = max(dist, key=lambda c: (dist[c], -c))
    return dist, label


def annotate_track(
    track: ObjectTrack,
    poses: Mapping[int, SE3Pose],
    frames: Mapping[int, FrameDetections],
) -> None:
    """Fill the representative and class fields of a track in place."""
    obs, box, score = select_representative(track, poses, frames)
    track.representative_observation = obs
    track.representative_box = box
    track.representative_score = score
    track.class_distribution, track.label = class_distribution(track, frames)


def _normalized_key(a: Observation, b: Observation):
    return (a, b) if a <= b else (b, a)


def _track_affinity(
    ta: ObjectTrack,
    tb: ObjectTrack,
    lifted: Mapping[Observation, OrientedBox3],
    match_scores: MatchScores,
    on_representatives: bool,
) -> float:
    """Mean over observation pairs of match score x (GIoU + 1).

    Pairs that were never assigned by the matcher score 0, so only pairs with
    a stored assignment need their GIoU evaluated.
    """
    total = 0.0
    rep_term = None
    if on_representatives:
        rep_term = giou3d(ta.representative_box, tb.representative_box) + 1.0
    for oa in ta.observations:
        for ob in tb.observations:
            s = match_scores.get(_normalized_key(oa, ob), 0.0)
            if s <= 0.0:
                continue
            term = rep_term if rep_term is not None else giou3d(lifted[oa], lifted[ob]) + 1.0
            total += s * term
    return total / (len(ta.observations) * len(tb.observations))


def merge_and_suppress(
    tracks: Sequence[ObjectTrack],
    match_scores: MatchScores,
    poses: Mapping[int, SE3Pose],
    frames: Mapping[int, FrameDetections],
    *,
    gate_giou: float = DEFAULT_MERGE_GATE_GIOU,
    merge_affinity: float = DEFAULT_MERGE_AFFINITY,
    suppress_iou: float = DEFAULT_SUPPRESS_IOU,
    affinity_on_representatives: bool = False,
) -> list[ObjectTrack]:
    """Merge duplicate tracks; suppress overlapping ones that will not merge.

    Track pairs whose representative GIoU falls below ``gate_giou`` are
    ignored. Remaining pairs merge when their affinity reaches
    ``merge_affinity`` (highest affinity first, representatives recomputed
    after every merge); pairs that stay separate but overlap above
    ``suppress_iou`` IoU drop the track with the lower representative score.
    ``affinity_on_representatives`` switches the affinity's GIoU term from
    lifted observation boxes to the representative boxes.
    """
    alive = [
        ObjectTrack(
            observations=list(t.observations),
            representative_box=t.representative_box,
            representative_score=t.representative_score,
            representative_observation=t.representative_observation,
            class_distribution=dict(t.class_distribution),
            label=t.label,
        )
        for t in tracks
    ]
    for t in alive:
        if t.representative_box is None:
            annotate_track(t, poses, frames)
    lifted = {
        o: lift_observation(o, poses, frames) for t in alive for o in t.observations
    }

    def gated_pairs():
        for p in range(len(alive)):
            for q in range(p + 1, len(alive)):
                if giou3d(alive[p].representative_box, alive[q].representative_box) >= gate_giou:
                    yield p, q

    while True:
        best = None
        for p, q in gated_pairs():
            aff = _track_affinity(
                alive[p], alive[q], lifted, match_scores, affinity_on_representatives
            )
            if aff >= merge_affinity and (best is None or aff > best[0]):
                best = (aff, p, q)
        if best is None:
            break
        _, p, q = best
        merged_obs: dict[int, Observation] = {}
        for obs in alive[p].observations + alive[q].observations:
            frame_id, det_idx = obs
            cur = merged_obs.get(frame_id)
            if cur is None or frames[frame_id].detections[det_idx].score > frames[frame_id].detections[cur[1]].score:
                merged_obs[frame_id] = obs
        merged = ObjectTrack(observations=sorted(merged_obs.values()))
        annotate_track(merged, poses, frames)
        alive[p] = merged
        del alive[q]

    # Suppression pass: among surviving pairs that overlap but failed to
    # merge, the lower-score track dies (highest overlap handled first).
    dead: set[int] = set()
    while True:
        worst = None
        for p, q in gated_pairs():
            if p in dead or q in dead:
                continue
            overlap = iou3d(alive[p].representative_box, alive[q].representative_box)
            if overlap > suppress_iou and (worst is None or overlap > worst[0]):
                worst = (overlap, p, q)
        if worst is None:
            break
        _, p, q = worst
        if alive[p].representative_score < alive[q].representative_score:
            dead.add(p)
        else:
            dead.add(q)
    return [t for i, t in enumerate(alive) if i not in dead]


def establish_point_tracks(
    track: ObjectTrack,
    rep_observation: Observation,
    edge_corner_inliers: Mapping[tuple[int, int], Sequence[CornerMatch]],
) -> list[PointTrack]:
    """Per-corner correspondence sets anchored at the representative box.

    Union-find over (frame, detection, corner) nodes connected by the corner
    inlier matches of surviving edges, restricted to this track's
    observations. The component holding representative corner n becomes the
    point track for corner n; components without a representative corner, and
    representative corners linked to nothing, are dropped. If a component
    holds several corners of one detection, only the lowest corner index per
    detection is kept.
    """
    obs_set = set(track.observations)
    dsu = DisjointSet()
    rep_frame, rep_det = rep_observation
    for corner in range(8):
        dsu.add((rep_frame, rep_det, corner))
    for (i, j) in sorted(edge_corner_inliers):
        for cm in edge_corner_inliers[(i, j)]:
            na = (i, cm.object_match.index_a)
            nb = (j, cm.object_match.index_b)
            if na in obs_set and nb in obs_set:
                dsu.union(na + (cm.corner_a,), nb + (cm.corner_b,))

    by_root: dict = {}
    for node in sorted(dsu.members()):
        by_root.setdefault(dsu.find(node), []).append(node)

    out: list[PointTrack] = []
    for corner in range(8):
        component = by_root[dsu.find((rep_frame, rep_det, corner))]
        if len(component) < 2:
            continue
        per_detection: dict[tuple[int, int], tuple[int, int, int]] = {}
        for frame_id, det_idx, c in sorted(component):
            per_detection.setdefault((frame_id, det_idx), (frame_id, det_idx, c))
        out.append(
            PointTrack(
                rep_corner_index=corner,
                members=tuple(sorted(per_detection.values())),
            )
        )
    return out
