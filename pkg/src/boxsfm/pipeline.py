"""End-to-end orchestration: frames in, registered poses and an object map out.

Stages: threshold detections, match all frame pairs (objects then corners),
verify a relative pose per pair, build the view graph, run rotation and
translation averaging with outlier rounds, register the largest component,
establish object tracks from the surviving inlier matches, elect
representatives and class distributions, merge or suppress duplicates, and
(optionally) refine every representative box against its corner point tracks.
Per-stage timings and counts go to the module logger; deterministic counts are
also recorded in the returned map's provenance.

Pair matching runs on a thread pool whose width comes from the configuration
(or the BOXSFM_WORKERS environment variable); results are reduced in pair
order, so the output is identical for any worker count.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Sequence

from .averaging import (
    GlobalPoses,
    build_view_graph,
    register,
    rotation_averaging,
    translation_averaging,
)
from .config import RunConfig
from .dataset import frames_digest
from .errors import NothingRegistered
from .geom import SE3Pose
from .matching import FrameDetections, match_corners, match_objects, threshold_detections
from .refine import refine_map
from .tracks import (
    ObjectTrack,
    SceneMap,
    annotate_track,
    establish_point_tracks,
    establish_tracks,
    merge_and_suppress,
)
from .twoview import RelativePoseEstimate, estimate_relative_pose

logger = logging.getLogger(__name__)


def resolve_workers(cfg: RunConfig) -> int:
    if cfg.workers > 0:
        return cfg.workers
    env = os.environ.get("BOXSFM_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _match_pair(
    fa: FrameDetections, fb: FrameDetections, cfg: RunConfig
) -> tuple[list, RelativePoseEstimate | None]:
    matches = match_objects(
        fa,
        fb,
        temperature=cfg.embedding_temperature,
        match_threshold=cfg.match_threshold,
    )
    if len(matches) < 2:
        return matches, None
    corners = match_corners(
        fa,
        fb,
        matches,
        square_tol=cfg.square_footprint_tol,
        score_temp_m=cfg.corner_score_temp_m,
    )
    est = estimate_relative_pose(
        fa,
        fb,
        matches,
        corners,
        max_box_error=cfg.max_box_error,
        min_inlier_ratio=cfg.min_inlier_ratio,
        corner_inlier_radius_m=cfg.corner_inlier_radius_m,
        refit_on_corner_inliers=cfg.refit_on_corner_inliers,
    )
    return matches, est


def run_pipeline(
    frames: Sequence[FrameDetections], cfg: RunConfig | None = None
) -> tuple[GlobalPoses, SceneMap]:
    """Run the full back-end on a collection of frames.

    Returns the registered poses and the scene map (whose ``poses`` field is
    the same object). Map observations reference detections by their
    ``source_index`` in the input frames.

    Raises:
        NothingRegistered: no frame pair produced a verified relative pose.
    """
    cfg = cfg or RunConfig()
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    counts: dict[str, int] = {}
    digest = frames_digest(frames)

    t0 = time.perf_counter()
    frames_t = {
        f.frame_id: threshold_detections(f, cfg.detection_tau) for f in frames
    }
    if len(frames_t) != len(frames):
        raise ValueError("duplicate frame ids")
    counts["frames"] = len(frames)
    counts["detections_kept"] = sum(len(f) for f in frames_t.values())
    logger.info(
        "thresholded %d frames to %d detections in %.3fs",
        counts["frames"],
        counts["detections_kept"],
        time.perf_counter() - t0,
    )

    ids = sorted(frames_t)
    pairs = [(a, b) for k, a in enumerate(ids) for b in ids[k + 1 :]]
    if cfg.pair_budget is not None:
        pairs = pairs[: cfg.pair_budget]
    counts["pairs_evaluated"] = len(pairs)

    t0 = time.perf_counter()
    workers = resolve_workers(cfg)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda p: _match_pair(frames_t[p[0]], frames_t[p[1]], cfg), pairs)
            )
    else:
        results = [_match_pair(frames_t[a], frames_t[b], cfg) for a, b in pairs]

    match_scores: dict = {}
    pair_estimates: dict = {}
    for (a, b), (matches, est) in zip(pairs, results):
        for m in matches:
            match_scores[((a, m.index_a), (b, m.index_b))] = m.score
        pair_estimates[(a, b)] = est
    counts["verified_edges"] = sum(1 for e in pair_estimates.values() if e is not None)
    logger.info(
        "matched %d pairs (%d verified) in %.3fs",
        len(pairs),
        counts["verified_edges"],
        time.perf_counter() - t0,
    )

    graph = build_view_graph(pair_estimates)
    if not graph.edges:
        raise NothingRegistered("no frame pair produced a verified relative pose")

    t0 = time.perf_counter()
    yaws, graph = rotation_averaging(
        graph, rounds=cfg.averaging_rounds, outlier_deg=cfg.rotation_outlier_deg
    )
    counts["edges_after_rotation_averaging"] = len(graph.edges)
    centers, graph = translation_averaging(
        graph, yaws, rounds=cfg.averaging_rounds, outlier_m=cfg.translation_outlier_m
    )
    counts["edges_after_translation_averaging"] = len(graph.edges)
    poses = register(graph, yaws, centers)
    counts["registered_frames"] = len(poses.registered)
    logger.info(
        "averaging kept %d edges, registered %d/%d frames in %.3fs",
        len(graph.edges),
        len(poses.registered),
        len(frames),
        time.perf_counter() - t0,
    )
    if not poses.registered:
        raise NothingRegistered("averaging removed every edge")

    t0 = time.perf_counter()
    surviving_matches = {
        key: est.inlier_object_matches
        for key, est in graph.sorted_edges()
        if key[0] in poses.registered and key[1] in poses.registered
    }
    tracks = establish_tracks(surviving_matches, frames_t, poses.registered)
    counts["tracks_established"] = len(tracks)
    for t in tracks:
        annotate_track(t, poses.poses, frames_t)
    tracks = merge_and_suppress(
        tracks,
        match_scores,
        poses.poses,
        frames_t,
        gate_giou=cfg.merge_gate_giou,
        merge_affinity=cfg.merge_affinity_threshold,
        suppress_iou=cfg.suppress_iou_threshold,
        affinity_on_representatives=cfg.merge_affinity_on_representatives,
    )
    counts["tracks_final"] = len(tracks)
    logger.info(
        "tracks: %d established, %d after merge/suppress in %.3fs",
        counts["tracks_established"],
        counts["tracks_final"],
        time.perf_counter() - t0,
    )

    scene_map = SceneMap(poses=poses, tracks=tuple(tracks), provenance={})
    if cfg.ba_enabled:
        t0 = time.perf_counter()
        corner_inliers_by_edge = {
            key: est.inlier_corner_matches for key, est in graph.sorted_edges()
        }
        point_tracks = {}
        for idx, track in enumerate(scene_map.tracks):
            if track.representative_observation is None:
                continue
            pts = establish_point_tracks(
                track, track.representative_observation, corner_inliers_by_edge
            )
            if pts:
                point_tracks[idx] = pts
        counts["tracks_refined"] = len(point_tracks)
        scene_map = refine_map(
            scene_map,
            point_tracks,
            frames_t,
            max_iterations=cfg.ba_max_iterations,
            fd_step=cfg.ba_fd_step,
            rel_tol=cfg.ba_rel_tol,
            step_tol=cfg.ba_step_tol,
            dims_min_m=cfg.ba_dims_min_m,
            dims_max_m=cfg.ba_dims_max_m,
            use_huber=cfg.ba_use_huber,
            huber_delta=cfg.ba_huber_delta,
        )
        logger.info(
            "refined %d tracks in %.3fs", counts["tracks_refined"], time.perf_counter() - t0
        )

    def to_source(obs):
        f, d = obs
        return (f, frames_t[f].detections[d].source_index)

    final_tracks = []
    for t in scene_map.tracks:
        final_tracks.append(
            ObjectTrack(
                observations=[to_source(o) for o in t.observations],
                representative_box=t.representative_box,
                representative_score=t.representative_score,
                representative_observation=None
                if t.representative_observation is None
                else to_source(t.representative_observation),
                class_distribution=dict(t.class_distribution),
                label=t.label,
            )
        )
    provenance = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "dataset_digest": digest,
        "counts": counts,
    }
    scene_map = SceneMap(poses=poses, tracks=tuple(final_tracks), provenance=provenance)
    return poses, scene_map


def relocalize(
    map_frames: Mapping[int, FrameDetections],
    poses: GlobalPoses,
    query: FrameDetections,
    cfg: RunConfig | None = None,
) -> SE3Pose | None:
    """Pose a new frame against the registered frames of an existing map.

    The query is matched and geometrically verified against every registered
    frame; the single registered frame with the most inlier object matches
    wins (ties: lower mean matching error, then lower frame id) and its pose
    composed with the inverted relative pose is returned. No averaging across
    frames. Returns None when no pair verifies.
    """
    cfg = cfg or RunConfig()
    query_t = threshold_detections(query, cfg.detection_tau)
    if len(query_t) == 0:
        return None
    best = None
    for frame_id in sorted(poses.registered):
        anchor = threshold_detections(map_frames[frame_id], cfg.detection_tau)
        _, est = _match_pair(anchor, query_t, cfg)
        if est is None:
            continue
        key = (-len(est.inlier_object_matches), est.mean_matching_error, frame_id)
        if best is None or key < best[0]:
            best = (key, frame_id, est)
    if best is None:
        return None
    _, frame_id, est = best
    # est.pose maps anchor-frame coords to query coords, so the query camera's
    # world pose is world_from_anchor composed with the inverse relative pose.
    return poses.poses[frame_id].compose(est.pose.to_se3().inverse())
