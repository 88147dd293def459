"""Object-centric structure-from-motion on gravity-aligned 3D boxes.

From per-frame 3D box detections with embeddings, estimate metric camera
poses and a global semantic object map; includes a synthetic-scene simulator
so the full pipeline can be verified against ground truth.
"""

from .averaging import (
    GlobalPoses,
    ViewGraph,
    build_view_graph,
    register,
    rotation_averaging,
    translation_averaging,
)
from .config import RunConfig
from .errors import (
    BehindCamera,
    BoxSfmError,
    DegenerateInput,
    DuplicateEdge,
    EmbeddingDimMismatch,
    EmptyGraph,
    NonGravityPose,
    NothingRegistered,
    ParseError,
    PlacementFailure,
    SchemaVersionMismatch,
    TrajectoryFailure,
    UnderconstrainedComponent,
)
from .geom import (
    CameraIntrinsics,
    OrientedBox3,
    SE3Pose,
    YawPose,
    box_corners,
    giou3d,
    gravity_rectification,
    iou3d,
    kabsch_yaw,
    project_point,
    se3_align,
    transform_box,
    wrap_angle,
)
from .matching import (
    CornerMatch,
    Detection,
    FrameDetections,
    ObjectMatch,
    match_corners,
    match_objects,
    threshold_detections,
)
from .metrics import MetricsReport, align_map_to_gt, evaluate_map, evaluate_poses
from .pipeline import relocalize, run_pipeline
from .refine import BoxParams, CornerResidualTerm, optimize_track, refine_map, reprojection_residual
from .sim import (
    DESK_NOISE,
    NOISELESS,
    NoiseModel,
    SceneSpec,
    SyntheticScene,
    generate_scene,
    generate_trajectory,
    render_detections,
    simulate,
)
from .tracks import (
    ObjectTrack,
    PointTrack,
    SceneMap,
    class_distribution,
    establish_point_tracks,
    establish_tracks,
    merge_and_suppress,
    representative_box,
)
from .twoview import (
    RelativePoseEstimate,
    box_match_error,
    corner_inliers,
    estimate_relative_pose,
)

__version__ = "0.1.0"
