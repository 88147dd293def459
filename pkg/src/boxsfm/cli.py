"""Command-line interface.

Verbs:
  sim         generate a synthetic dataset plus its ground-truth sidecar
  run         run the full pipeline on a dataset, write poses + map
  eval-map    score a map against ground-truth boxes (AP/AR)
  eval-poses  score estimated poses against dataset ground truth (ATE/ARE)
  reloc       relocalize query frames against a previously built map

Flags mirror the run configuration; ``--config FILE`` loads a JSON config
whose values override any flags. Every ``run`` writes its resolved config next
to its outputs. Exit codes: 0 success, 2 nothing registered, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .averaging import GlobalPoses
from .config import RunConfig
from .dataset import (
    load_dataset,
    load_map,
    load_poses,
    load_scene_gt,
    save_dataset,
    save_map,
    save_metrics,
    save_poses,
    save_scene_gt,
    save_wireframe_obj,
)
from .errors import BoxSfmError, NothingRegistered
from .metrics import align_map_to_gt, evaluate_map, evaluate_poses
from .pipeline import relocalize, run_pipeline
from .sim import DESK_NOISE, NOISELESS, NoiseModel, SceneSpec, simulate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOTHING_REGISTERED = 2

_NOISE_PRESETS = {"none": NOISELESS, "desk": DESK_NOISE}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("pipeline configuration")
    g.add_argument("--config", type=Path, help="JSON config file; overrides flags")
    g.add_argument("--preset", choices=["class-agnostic", "class-aware"], default="class-agnostic")
    g.add_argument("--tau", type=float, help="detection score threshold")
    g.add_argument("--match-threshold", type=float)
    g.add_argument("--pair-budget", type=int)
    g.add_argument("--no-ba", action="store_true", help="skip box refinement")
    g.add_argument("--no-refit", action="store_true", help="keep the raw sample pose")
    g.add_argument("--workers", type=int)
    g.add_argument("--seed", type=int)


def _resolve_config(args) -> RunConfig:
    base = RunConfig.class_aware() if args.preset == "class-aware" else RunConfig()
    overrides = {}
    if args.tau is not None:
        overrides["detection_tau"] = args.tau
    if args.match_threshold is not None:
        overrides["match_threshold"] = args.match_threshold
    if args.pair_budget is not None:
        overrides["pair_budget"] = args.pair_budget
    if args.no_ba:
        overrides["ba_enabled"] = False
    if args.no_refit:
        overrides["refit_on_corner_inliers"] = False
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = base.replace(**overrides) if overrides else base
    if args.config:
        file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        cfg = RunConfig.from_dict({**cfg.to_dict(), **file_values})
    return cfg


def _cmd_sim(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = SceneSpec(
        n_objects=args.objects,
        room_extent=tuple(args.room),
        n_classes=args.classes,
        embedding_dim=args.embedding_dim,
        rng_seed=args.seed,
    )
    noise = _NOISE_PRESETS[args.noise]
    scene = simulate(spec, args.frames, noise, min_visible=args.min_visible)
    save_dataset(scene.frames, out / "dataset.jsonl")
    save_scene_gt(scene, out / "gt.json")
    print(f"wrote {out / 'dataset.jsonl'} ({len(scene.frames)} frames) and {out / 'gt.json'}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _resolve_config(args)
    frames = load_dataset(args.dataset)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    try:
        poses, scene_map = run_pipeline(frames, cfg)
    except NothingRegistered as e:
        print(f"nothing registered: {e}", file=sys.stderr)
        return EXIT_NOTHING_REGISTERED
    save_poses(poses, out / "poses.txt")
    save_map(scene_map, out / "map.json")
    if args.export_obj:
        boxes = [t.representative_box for t in scene_map.tracks if t.representative_box is not None]
        save_wireframe_obj(boxes, out / "map_wireframe.obj")
    print(
        f"registered {len(poses.registered)}/{len(frames)} frames, "
        f"{len(scene_map.tracks)} tracks -> {out}"
    )
    return EXIT_OK


def _cmd_eval_map(args) -> int:
    scene_map = load_map(args.map)
    gt_boxes, gt_poses = load_scene_gt(args.gt)
    if not args.no_align:
        scene_map = align_map_to_gt(scene_map, gt_poses)
    report = evaluate_map(scene_map, gt_boxes)
    payload = {k: v for k, v in report.to_dict().items() if v is not None}
    if args.out:
        save_metrics(payload, args.out)
    print(json.dumps(payload, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_eval_poses(args) -> int:
    est = load_poses(args.poses)
    frames = load_dataset(args.dataset)
    gt_poses = {f.frame_id: f.gt_pose for f in frames if f.gt_pose is not None}
    if not gt_poses:
        print("dataset has no ground-truth poses", file=sys.stderr)
        return EXIT_ERROR
    report = evaluate_poses(est, gt_poses, total_frames=len(frames))
    payload = {k: v for k, v in report.to_dict().items() if v is not None}
    if args.out:
        save_metrics(payload, args.out)
    print(json.dumps(payload, sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_reloc(args) -> int:
    cfg = _resolve_config(args)
    map_frames = {f.frame_id: f for f in load_dataset(args.dataset)}
    poses = load_poses(args.poses)
    queries = load_dataset(args.queries)
    relocalized = {}
    for query in queries:
        pose = relocalize(map_frames, poses, query, cfg)
        if pose is not None:
            relocalized[query.frame_id] = pose
    if args.out:
        from .averaging import GlobalPoses

        save_poses(GlobalPoses(relocalized, frozenset(relocalized)), args.out)
    print(f"relocalized {len(relocalized)}/{len(queries)} query frames")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxsfm",
        description="Object-centric structure-from-motion on gravity-aligned 3D boxes.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="generate a synthetic dataset")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--objects", type=int, default=30)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", choices=sorted(_NOISE_PRESETS), default="none")
    p.add_argument("--room", type=float, nargs=3, default=[8.0, 3.0, 8.0], metavar=("X", "Y", "Z"))
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--embedding-dim", type=int, default=32)
    p.add_argument("--min-visible", type=int, default=4)
    p.set_defaults(func=_cmd_sim)

    p = sub.add_parser("run", help="run the pipeline on a dataset")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--export-obj", action="store_true", help="write a wireframe OBJ of the map")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval-map", help="score a map against ground-truth boxes")
    p.add_argument("--map", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path, help="ground-truth sidecar from `sim`")
    p.add_argument("--no-align", action="store_true", help="skip rigid alignment to ground truth")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_eval_map)

    p = sub.add_parser("eval-poses", help="score poses against dataset ground truth")
    p.add_argument("--poses", required=True, type=Path)
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_eval_poses)

    p = sub.add_parser("reloc", help="relocalize query frames against a map")
    p.add_argument("--dataset", required=True, type=Path, help="dataset the map was built from")
    p.add_argument("--poses", required=True, type=Path, help="poses file from `run`")
    p.add_argument("--queries", required=True, type=Path, help="dataset of query frames")
    p.add_argument("--out", type=Path, help="write relocalized poses here")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_reloc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except BoxSfmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
