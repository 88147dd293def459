"""Per-frame detections and deterministic object/corner association.

Object association runs a double-softmax assignment over cosine similarities
of the detection embeddings (mutual argmax, thresholded), so two frames agree
on a partial injective set of object matches. Corner association never matches
corners across different objects: for every matched object pair the eight box
corners are put in correspondence by testing the corner-index permutations a
vertical box symmetry allows and keeping the one with the lowest rigid
alignment residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, EmbeddingDimMismatch
from .geom import (
    CameraIntrinsics,
    OrientedBox3,
    SE3Pose,
    Vec3,
    box_corners,
    corner_sign_permutation,
    kabsch_yaw,
)

DEFAULT_EMBEDDING_TEMPERATURE = 0.1
DEFAULT_MATCH_THRESHOLD = 0.5
DEFAULT_SQUARE_FOOTPRINT_TOL = 0.1
DEFAULT_CORNER_SCORE_TEMP_M = 0.05


@dataclass(frozen=True, eq=False)
class Detection:
    """One thresholded detector output in the rectified camera frame."""

    box: OrientedBox3
    embedding: np.ndarray
    score: float
    class_id: int = -1
    source_index: int = 0
    gt_object_id: int | None = None

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=float).reshape(-1).copy()
        emb.flags.writeable = False
        object.__setattr__(self, "embedding", emb)
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True, eq=False)
class FrameDetections:
    """All detections of one image plus its camera calibration.

    Detections are expressed in the gravity-rectified camera frame;
    ``gravity_dir_raw`` records where gravity pointed in the raw (unrectified)
    camera frame and is the unit +Y vector for pre-rectified input.
    ``gt_pose`` (world-from-rectified-camera) and per-detection
    ``gt_object_id`` are optional ground truth carried for evaluation only.
    """

    frame_id: int
    intrinsics: CameraIntrinsics
    detections: tuple[Detection, ...]
    gravity_dir_raw: Vec3 = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    gt_pose: SE3Pose | None = None

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        g = np.asarray(self.gravity_dir_raw, dtype=float).reshape(3).copy()
        if abs(np.linalg.norm(g) - 1.0) > 1e-6:
            raise ValueError("gravity_dir_raw must be unit norm")
        g.flags.writeable = False
        object.__setattr__(self, "gravity_dir_raw", g)
        dims = {d.embedding.shape[0] for d in self.detections}
        if len(dims) > 1:
            raise ValueError(f"mixed embedding dimensions in one frame: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True, eq=False)
class ObjectMatch:
    """A matched detection pair: indices into the two frames' detection lists."""

    index_a: int
    index_b: int
    score: float


@dataclass(frozen=True, eq=False)
class CornerMatch:
    """A corner-level correspondence inside an object-level match."""

    object_match: ObjectMatch
    corner_a: int
    corner_b: int
    score: float

    def __post_init__(self):
        if not (0 <= self.corner_a < 8 and 0 <= self.corner_b < 8):
            raise ValueError("corner indices must be in 0..7")


def threshold_detections(frame: FrameDetections, tau: float) -> FrameDetections:
    """Keep detections with score >= tau, preserving order and source_index."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    kept = tuple(d for d in frame.detections if d.score >= tau)
    return FrameDetections(
        frame_id=frame.frame_id,
        intrinsics=frame.intrinsics,
        detections=kept,
        gravity_dir_raw=frame.gravity_dir_raw,
        gt_pose=frame.gt_pose,
    )


def _softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def match_objects(
    a: FrameDetections,
    b: FrameDetections,
    *,
    temperature: float = DEFAULT_EMBEDDING_TEMPERATURE,
    match_threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> list[ObjectMatch]:
    """Partial injective assignment between the detections of two frames.

    Scores are a double softmax over temperature-scaled cosine similarities;
    a pair is kept when it is the mutual argmax of its row and column and its
    score reaches ``match_threshold``. Deterministic for identical inputs.

    Raises:
        EmbeddingDimMismatch: the two frames carry embeddings of different
            dimensions.
    """
    if len(a) == 0 or len(b) == 0:
        return []
    ea = np.stack([d.embedding for d in a.detections])
    eb = np.stack([d.embedding for d in b.detections])
    if ea.shape[1] != eb.shape[1]:
        raise EmbeddingDimMismatch(
            f"embedding dims differ: {ea.shape[1]} vs {eb.shape[1]}"
        )
    na = ea / np.maximum(np.linalg.norm(ea, axis=1, keepdims=True), 1e-12)
    nb = eb / np.maximum(np.linalg.norm(eb, axis=1, keepdims=True), 1e-12)
    sim = (na @ nb.T) / temperature
    p = _softmax(sim, axis=1) * _softmax(sim, axis=0)
    best_j = p.argmax(axis=1)
    best_i = p.argmax(axis=0)
    matches = []
    for i in range(p.shape[0]):
        j = int(best_j[i])
        if int(best_i[j]) == i and p[i, j] >= match_threshold:
            matches.append(ObjectMatch(i, j, float(p[i, j])))
    return matches


def _candidate_turns(box_a: OrientedBox3, box_b: OrientedBox3, square_tol: float):
    """Quarter-turn counts to test: half turns always, quarter turns only when
    either footprint is within ``square_tol`` of square."""
    turns = [0, 2]
    for box in (box_a, box_b):
        w, l = float(box.dims[0]), float(box.dims[2])
        if abs(w - l) / max(w, l) < square_tol:
            turns += [1, 3]
            break
    return turns


def match_corners(
    a: FrameDetections,
    b: FrameDetections,
    object_matches: list[ObjectMatch],
    *,
    square_tol: float = DEFAULT_SQUARE_FOOTPRINT_TOL,
    score_temp_m: float = DEFAULT_CORNER_SCORE_TEMP_M,
) -> list[CornerMatch]:
    """Corner correspondences for every object match.

    For each matched pair the candidate corner permutations are those induced
    by vertical box symmetries (half turns always; quarter turns when the
    footprint is near square). A box is exactly symmetric under its own half
    turn, so a single pair can never distinguish these candidates by residual
    alone: each candidate is fit per pair, the fitted pose best supported
    across all matched pairs becomes the consensus, and every pair selects the
    permutation most consistent with that consensus (exact ties prefer the
    pose with the smaller yaw magnitude, then enumeration order). The eight
    corner pairs of the winning permutation are emitted with scores
    exp(-residual / score_temp_m), residuals taken from the pair's own rigid
    fit. Every corner match respects the object assignment by construction.
    """
    pair_data = []
    for match in object_matches:
        box_a = a.detections[match.index_a].box
        box_b = b.detections[match.index_b].box
        ca = box_corners(box_a)
        cb = box_corners(box_b)
        candidates = []
        for turns in _candidate_turns(box_a, box_b, square_tol):
            perm = corner_sign_permutation(turns)
            candidates.append((perm, cb[perm]))
        pair_data.append((match, ca, candidates))
    if not pair_data:
        return []

    poses = []
    for _, ca, candidates in pair_data:
        for _, dst in candidates:
            try:
                poses.append(kabsch_yaw(ca, dst))
            except DegenerateInput:
                continue
    if not poses:
        return []

    def pair_residuals(pose, ca, candidates):
        moved = pose.apply(ca)
        return [float(np.linalg.norm(moved - dst, axis=1).mean()) for _, dst in candidates]

    best = None  # (cost, |yaw|, pose)
    for pose in poses:
        cost = sum(min(pair_residuals(pose, ca, c)) for _, ca, c in pair_data)
        if (
            best is None
            or cost < best[0] - 1e-9
            or (cost <= best[0] + 1e-9 and abs(pose.yaw) < best[1] - 1e-12)
        ):
            best = (cost, abs(pose.yaw), pose)
    consensus = best[2]

    out: list[CornerMatch] = []
    for match, ca, candidates in pair_data:
        res = pair_residuals(consensus, ca, candidates)
        lo = min(res)
        chosen = next(i for i, r in enumerate(res) if r <= lo + 1e-9)
        perm, dst = candidates[chosen]
        try:
            pose = kabsch_yaw(ca, dst)
        except DegenerateInput:
            continue
        residuals = np.linalg.norm(pose.apply(ca) - dst, axis=1)
        for k in range(8):
            out.append(
                CornerMatch(
                    object_match=match,
                    corner_a=k,
                    corner_b=perm[k],
                    score=float(np.exp(-residuals[k] / score_temp_m)),
                )
            )
    return out
