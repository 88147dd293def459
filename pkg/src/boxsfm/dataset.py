"""File formats: dataset (JSON lines), poses, maps, ground truth, wireframes.

The dataset is UTF-8 line-delimited JSON: a header record declaring the schema
version, then one record per frame. Floats round-trip bit-exactly through
their shortest decimal representation, so save -> load is the identity for
every documented field. All writers emit keys in sorted order and never embed
timestamps, which keeps outputs byte-identical across runs of the same input.

Detections are stored in the gravity-rectified camera frame; a frame's
``gt_pose``, when present, is the world-from-rectified-camera ground truth.
Map files reference detections by their ``source_index`` in the original
dataset, so they stay meaningful regardless of the detection threshold used
for the run.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .averaging import GlobalPoses
from .errors import ParseError, SchemaVersionMismatch
from .geom import CameraIntrinsics, OrientedBox3, SE3Pose, box_corners
from .matching import Detection, FrameDetections
from .sim import SyntheticScene
from .tracks import ObjectTrack, SceneMap

DATASET_SCHEMA = "boxsfm/dataset-v1"
MAP_SCHEMA = "boxsfm/map-v1"
GT_SCHEMA = "boxsfm/gt-v1"
POSES_HEADER = "# boxsfm/poses-v1"

_BOX_EDGES = (
    (0, 1), (2, 3), (4, 5), (6, 7),  # box-local X edges
    (0, 2), (1, 3), (4, 6), (5, 7),  # box-local Y edges
    (0, 4), (1, 5), (2, 6), (3, 7),  # box-local Z edges
)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _pose_to_json(pose: SE3Pose) -> dict:
    return {"rotation": pose.rotation.tolist(), "center": pose.t.tolist()}


def _pose_from_json(d: dict) -> SE3Pose:
    return SE3Pose(np.asarray(d["rotation"], dtype=float), np.asarray(d["center"], dtype=float))


def _box_to_json(box: OrientedBox3) -> dict:
    return {"center": box.center.tolist(), "dims": box.dims.tolist(), "yaw": float(box.yaw)}


def _box_from_json(d: dict) -> OrientedBox3:
    return OrientedBox3(
        np.asarray(d["center"], dtype=float),
        np.asarray(d["dims"], dtype=float),
        float(d["yaw"]),
    )


def _frame_to_json(frame: FrameDetections) -> dict:
    k = frame.intrinsics
    return {
        "frame_id": int(frame.frame_id),
        "image_size": [int(k.width), int(k.height)],
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
        "gravity_dir_raw": frame.gravity_dir_raw.tolist(),
        "gt_pose": None if frame.gt_pose is None else _pose_to_json(frame.gt_pose),
        "detections": [
            {
                **_box_to_json(d.box),
                "score": float(d.score),
                "class_id": int(d.class_id),
                "embedding": d.embedding.tolist(),
                "gt_object_id": None if d.gt_object_id is None else int(d.gt_object_id),
            }
            for d in frame.detections
        ],
    }


def _frame_from_json(d: dict) -> FrameDetections:
    width, height = d["image_size"]
    k = d["intrinsics"]
    intrinsics = CameraIntrinsics(
        fx=float(k["fx"]), fy=float(k["fy"]), cx=float(k["cx"]), cy=float(k["cy"]),
        width=int(width), height=int(height),
    )
    detections = tuple(
        Detection(
            box=_box_from_json(rec),
            embedding=np.asarray(rec["embedding"], dtype=float),
            score=float(rec["score"]),
            class_id=int(rec["class_id"]),
            source_index=idx,
            gt_object_id=None if rec.get("gt_object_id") is None else int(rec["gt_object_id"]),
        )
        for idx, rec in enumerate(d["detections"])
    )
    gt_pose = d.get("gt_pose")
    return FrameDetections(
        frame_id=int(d["frame_id"]),
        intrinsics=intrinsics,
        detections=detections,
        gravity_dir_raw=np.asarray(d["gravity_dir_raw"], dtype=float),
        gt_pose=None if gt_pose is None else _pose_from_json(gt_pose),
    )


def save_dataset(frames: Iterable[FrameDetections], path) -> None:
    lines = [_dump({"schema": DATASET_SCHEMA})]
    lines += [_dump(_frame_to_json(f)) for f in frames]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> list[FrameDetections]:
    """Parse a dataset file.

    Raises:
        ParseError: malformed JSON or a missing field, reported with its
            1-based line number.
        SchemaVersionMismatch: the header declares an unknown schema.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError(1, "empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(1, f"invalid header: {e.msg}") from e
    if not isinstance(header, dict) or "schema" not in header:
        raise ParseError(1, "header record must declare a schema")
    if header["schema"] != DATASET_SCHEMA:
        raise SchemaVersionMismatch(
            f"expected {DATASET_SCHEMA!r}, found {header['schema']!r}"
        )
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(lineno, f"invalid JSON: {e.msg}") from e
        try:
            frames.append(_frame_from_json(record))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(lineno, f"bad frame record: {e}") from e
    return frames


def frames_digest(frames: Iterable[FrameDetections]) -> str:
    """Content hash of a frame sequence (identical to hashing the saved file's
    frame records)."""
    h = hashlib.sha256()
    for f in frames:
        h.update(_dump(_frame_to_json(f)).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def save_poses(poses: GlobalPoses, path) -> None:
    """Write one line per registered frame: id plus the 3x4 matrix, row major."""
    lines = [POSES_HEADER]
    for frame_id in sorted(poses.registered):
        m = poses.poses[frame_id].matrix34()
        values = " ".join(repr(float(v)) for v in m.reshape(-1))
        lines.append(f"{frame_id} {values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_poses(path) -> GlobalPoses:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != POSES_HEADER:
        raise SchemaVersionMismatch(f"poses file must start with {POSES_HEADER!r}")
    poses = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 13:
            raise ParseError(lineno, f"expected 13 fields, found {len(parts)}")
        try:
            frame_id = int(parts[0])
            m = np.array([float(v) for v in parts[1:]]).reshape(3, 4)
        except ValueError as e:
            raise ParseError(lineno, str(e)) from e
        poses[frame_id] = SE3Pose(m[:, :3], m[:, 3])
    return GlobalPoses(poses, frozenset(poses))


def _track_to_json(track: ObjectTrack) -> dict:
    return {
        "observations": [[int(f), int(d)] for f, d in track.observations],
        "representative_box": None
        if track.representative_box is None
        else _box_to_json(track.representative_box),
        "representative_score": float(track.representative_score),
        "class_distribution": {str(c): float(p) for c, p in sorted(track.class_distribution.items())},
        "label": int(track.label),
    }


def _track_from_json(d: dict) -> ObjectTrack:
    box = d.get("representative_box")
    return ObjectTrack(
        observations=[(int(f), int(i)) for f, i in d["observations"]],
        representative_box=None if box is None else _box_from_json(box),
        representative_score=float(d["representative_score"]),
        class_distribution={int(c): float(p) for c, p in d["class_distribution"].items()},
        label=int(d["label"]),
    )


def save_map(scene_map: SceneMap, path) -> None:
    doc = {
        "schema": MAP_SCHEMA,
        "provenance": scene_map.provenance,
        "poses": {
            str(fid): _pose_to_json(scene_map.poses.poses[fid])
            for fid in sorted(scene_map.poses.registered)
        },
        "tracks": [_track_to_json(t) for t in scene_map.tracks],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_map(path) -> SceneMap:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != MAP_SCHEMA:
        raise SchemaVersionMismatch(f"expected {MAP_SCHEMA!r}, found {doc.get('schema')!r}")
    poses = {int(fid): _pose_from_json(p) for fid, p in doc["poses"].items()}
    return SceneMap(
        poses=GlobalPoses(poses, frozenset(poses)),
        tracks=tuple(_track_from_json(t) for t in doc["tracks"]),
        provenance=doc.get("provenance", {}),
    )


def save_scene_gt(scene: SyntheticScene, path) -> None:
    """Ground-truth sidecar for a simulated capture: world boxes and poses.

    Only objects observed by the capture are written; a map is evaluated
    against the set of objects its frames could have seen.
    """
    from .sim import observed_object_ids

    observed = observed_object_ids(scene)
    doc = {
        "schema": GT_SCHEMA,
        "objects": [
            {
                **_box_to_json(o.box),
                "class_id": int(o.class_id),
                "object_id": int(o.object_id),
            }
            for o in scene.objects
            if o.object_id in observed
        ],
        "poses": {str(i): _pose_to_json(p) for i, p in enumerate(scene.gt_poses)},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_scene_gt(path) -> tuple[list[tuple[OrientedBox3, int]], dict[int, SE3Pose]]:
    """Returns ([(gt box, class id)], {frame id: gt pose})."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != GT_SCHEMA:
        raise SchemaVersionMismatch(f"expected {GT_SCHEMA!r}, found {doc.get('schema')!r}")
    boxes = [(_box_from_json(o), int(o["class_id"])) for o in doc["objects"]]
    poses = {int(i): _pose_from_json(p) for i, p in doc["poses"].items()}
    return boxes, poses


def save_metrics(metrics: Mapping, path) -> None:
    Path(path).write_text(
        json.dumps(dict(metrics), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def save_wireframe_obj(boxes: Sequence[OrientedBox3], path) -> None:
    """Export boxes as line segments in Wavefront OBJ (viewable anywhere)."""
    lines = ["# box wireframes"]
    for box in boxes:
        for c in box_corners(box):
            lines.append(f"v {float(c[0])!r} {float(c[1])!r} {float(c[2])!r}")
    for b in range(len(boxes)):
        for i, j in _BOX_EDGES:
            lines.append(f"l {b * 8 + i + 1} {b * 8 + j + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
