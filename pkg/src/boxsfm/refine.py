"""Box refinement against corner reprojections with cameras held fixed.

Each object track contributes one small nonlinear least-squares problem over
seven box parameters (center, log dims, yaw): for every point-track member the
representative box corner is projected into that member's camera and compared
to the projection of the member's own detected corner, normalized by image
size. Levenberg-Marquardt with central-difference Jacobians drives the cost;
accepted steps never increase it. Dims are optimized in log space and clamped,
which keeps them positive without constraints.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import BehindCamera
from .geom import (
    CameraIntrinsics,
    OrientedBox3,
    SE3Pose,
    box_corners,
    project_camera_point,
    rot_y,
    wrap_angle,
)
from .geom import _CORNER_SIGNS  # fixed corner ordering, shared with box_corners
from .matching import FrameDetections
from .tracks import ObjectTrack, PointTrack, SceneMap

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 100
DEFAULT_FD_STEP = 1e-6
DEFAULT_REL_TOL = 1e-10
DEFAULT_STEP_TOL = 1e-10
DEFAULT_DIMS_MIN_M = 1e-3
DEFAULT_DIMS_MAX_M = 50.0
DEFAULT_HUBER_DELTA = 0.01
_OBSERVED_XY_GATE = 4.0  # observed corners may fall this many image sizes out


@dataclass
class BoxParams:
    """Optimization parametrization of a box: center, log dims, yaw."""

    center: np.ndarray
    log_dims: np.ndarray
    yaw: float

    @classmethod
    def from_box(cls, box: OrientedBox3) -> "BoxParams":
        return cls(np.array(box.center), np.log(np.array(box.dims)), float(box.yaw))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "BoxParams":
        return cls(x[0:3].copy(), x[3:6].copy(), float(x[6]))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.center, self.log_dims, [self.yaw]])

    def to_box(self) -> OrientedBox3:
        return OrientedBox3(self.center, np.exp(self.log_dims), wrap_angle(self.yaw))

    def corner(self, index: int) -> np.ndarray:
        offset = _CORNER_SIGNS[index] * (np.exp(self.log_dims) * 0.5)
        return self.center + rot_y(self.yaw) @ offset


@dataclass(frozen=True, eq=False)
class CornerResidualTerm:
    """One corner observation: where a representative corner should project.

    ``observed_xy`` is the precomputed pixel projection of the observed
    detection's matched corner in its own image; terms whose observation falls
    outside four image sizes (heavily truncated boxes) are rejected at
    construction.
    """

    frame_id: int
    intrinsics: CameraIntrinsics
    cam_from_world: SE3Pose
    rep_corner_index: int
    observed_xy: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        xy = np.asarray(self.observed_xy, dtype=float).reshape(2).copy()
        xy.flags.writeable = False
        object.__setattr__(self, "observed_xy", xy)
        w, h = self.image_size
        half_w = (_OBSERVED_XY_GATE - 1.0) / 2.0
        if not (-half_w * w <= xy[0] <= (1.0 + half_w) * w) or not (
            -half_w * h <= xy[1] <= (1.0 + half_w) * h
        ):
            raise ValueError(f"observed corner {xy} is outside {_OBSERVED_XY_GATE}x image bounds")


def reprojection_residual(params: BoxParams, term: CornerResidualTerm) -> np.ndarray:
    """Normalized 2-vector residual of one corner term.

    Raises:
        BehindCamera: the corner has non-positive depth in this camera; the
            solver treats such terms as deactivated (zero contribution).
    """
    p_cam = term.cam_from_world.apply(params.corner(term.rep_corner_index))
    u, v = project_camera_point(term.intrinsics, p_cam)
    w, h = term.image_size
    return np.array([(u - term.observed_xy[0]) / w, (v - term.observed_xy[1]) / h])


def _huber_weights(residuals: np.ndarray, delta: float) -> np.ndarray:
    """Per-term sqrt IRLS weights for a Huber loss on the term norm."""
    norms = np.linalg.norm(residuals.reshape(-1, 2), axis=1)
    w = np.ones_like(norms)
    mask = norms > delta
    w[mask] = np.sqrt(delta / norms[mask])
    return np.repeat(w, 2)


def optimize_track(
    initial: OrientedBox3,
    terms: Sequence[CornerResidualTerm],
    *,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    fd_step: float = DEFAULT_FD_STEP,
    rel_tol: float = DEFAULT_REL_TOL,
    step_tol: float = DEFAULT_STEP_TOL,
    dims_min_m: float = DEFAULT_DIMS_MIN_M,
    dims_max_m: float = DEFAULT_DIMS_MAX_M,
    use_huber: bool = False,
    huber_delta: float = DEFAULT_HUBER_DELTA,
    cost_history: list | None = None,
) -> OrientedBox3:
    """Levenberg-Marquardt refinement of one box against its corner terms.

    Jacobians are central finite differences; iteration stops on a relative
    cost decrease below ``rel_tol``, a step below ``step_tol``, or after
    ``max_iterations``. A box without active terms is returned unchanged.
    When given, ``cost_history`` collects the accepted costs (initial first).
    """
    terms = list(terms)
    if not terms:
        return initial
    log_lo, log_hi = math.log(dims_min_m), math.log(dims_max_m)
    warned: set[int] = set()

    def clamp(x: np.ndarray) -> np.ndarray:
        out = x.copy()
        out[3:6] = np.clip(out[3:6], log_lo, log_hi)
        return out

    def residual_vector(x: np.ndarray, warn: bool = False) -> np.ndarray:
        params = BoxParams.from_vector(x)
        out = np.zeros(2 * len(terms))
        for t_idx, term in enumerate(terms):
            try:
                out[2 * t_idx : 2 * t_idx + 2] = reprojection_residual(params, term)
            except BehindCamera:
                if warn and t_idx not in warned:
                    warned.add(t_idx)
                    logger.warning(
                        "corner term %d of frame %d is behind the camera; deactivated",
                        term.rep_corner_index,
                        term.frame_id,
                    )
        if use_huber:
            out = out * _huber_weights(out, huber_delta)
        return out

    x = clamp(BoxParams.from_box(initial).to_vector())
    r = residual_vector(x, warn=True)
    if len(warned) == len(terms):
        logger.warning("no active corner terms; box returned unchanged")
        return initial
    cost = float(r @ r)
    if cost_history is not None:
        cost_history.append(cost)
    if cost <= 1e-28:
        return BoxParams.from_vector(x).to_box()
    lam = 1e-3
    n_params = x.size

    for _ in range(max_iterations):
        jac = np.zeros((r.size, n_params))
        for k in range(n_params):
            step = np.zeros(n_params)
            step[k] = fd_step
            jac[:, k] = (residual_vector(x + step) - residual_vector(x - step)) / (
                2.0 * fd_step
            )
        grad = jac.T @ r
        hess = jac.T @ jac
        accepted = False
        for _ in range(25):
            try:
                delta = np.linalg.solve(hess + lam * np.eye(n_params), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = clamp(x + delta)
            r_new = residual_vector(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                step_size = float(np.max(np.abs(x_new - x)))
                rel_decrease = (cost - cost_new) / max(cost, 1e-300)
                x, r, cost = x_new, r_new, cost_new
                if cost_history is not None:
                    cost_history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel_decrease < rel_tol or step_size < step_tol:
                    return BoxParams.from_vector(x).to_box()
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not accepted:
            break
    return BoxParams.from_vector(x).to_box()


def build_corner_terms(
    track: ObjectTrack,
    point_tracks: Sequence[PointTrack],
    poses: Mapping[int, SE3Pose],
    frames: Mapping[int, FrameDetections],
) -> list[CornerResidualTerm]:
    """Residual terms for one track from its point tracks.

    Each member contributes the pixel projection of corner m of its own
    detection (in its own camera); members whose corner projects behind their
    camera or far outside the image are skipped.
    """
    terms: list[CornerResidualTerm] = []
    for pt in point_tracks:
        for frame_id, det_idx, corner in pt.members:
            frame = frames[frame_id]
            det = frame.detections[det_idx]
            p_cam = box_corners(det.box)[corner]
            try:
                uv = project_camera_point(frame.intrinsics, p_cam)
            except BehindCamera:
                logger.debug(
                    "observed corner %d of (%d, %d) is behind its own camera; skipped",
                    corner,
                    frame_id,
                    det_idx,
                )
                continue
            try:
                terms.append(
                    CornerResidualTerm(
                        frame_id=frame_id,
                        intrinsics=frame.intrinsics,
                        cam_from_world=poses[frame_id].inverse(),
                        rep_corner_index=pt.rep_corner_index,
                        observed_xy=np.array(uv),
                        image_size=frame.intrinsics.image_size,
                    )
                )
            except ValueError:
                logger.debug(
                    "observed corner %d of (%d, %d) fails the image-bounds gate; skipped",
                    corner,
                    frame_id,
                    det_idx,
                )
    return terms


def refine_map(
    scene_map: SceneMap,
    point_tracks: Mapping[int, Sequence[PointTrack]],
    frames: Mapping[int, FrameDetections],
    **solver_kwargs,
) -> SceneMap:
    """Refine every track's representative box; poses and topology unchanged.

    ``point_tracks`` maps a track's index in ``scene_map.tracks`` to its point
    tracks; tracks without point tracks pass through untouched.
    """
    poses = scene_map.poses.poses
    refined: list[ObjectTrack] = []
    for idx, track in enumerate(scene_map.tracks):
        pts = point_tracks.get(idx, ())
        if not pts or track.representative_box is None:
            refined.append(track)
            continue
        terms = build_corner_terms(track, pts, poses, frames)
        if not terms:
            refined.append(track)
            continue
        new_box = optimize_track(track.representative_box, terms, **solver_kwargs)
        refined.append(
            ObjectTrack(
                observations=list(track.observations),
                representative_box=new_box,
                representative_score=track.representative_score,
                representative_observation=track.representative_observation,
                class_distribution=dict(track.class_distribution),
                label=track.label,
            )
        )
    return SceneMap(poses=scene_map.poses, tracks=tuple(refined), provenance=dict(scene_map.provenance))
