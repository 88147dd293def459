"""Run configuration: every pipeline threshold in one serializable object.

Defaults reproduce the published operating point for class-agnostic captures
(detection threshold 0.25, object match threshold 0.5); the class-aware preset
switches to 0.2 / 0.4. All other constants (verification gates, averaging
rounds and thresholds, merge constants) default to their published values and
are deliberately centralized here so a run's provenance is one hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


@dataclass(frozen=True)
class RunConfig:
    # Detection thresholding and object/corner matching.
    detection_tau: float = 0.25
    embedding_temperature: float = 0.1
    match_threshold: float = 0.5
    square_footprint_tol: float = 0.1
    corner_score_temp_m: float = 0.05
    # Two-view geometric verification.
    max_box_error: float = 0.75
    min_inlier_ratio: float = 0.5
    corner_inlier_radius_m: float = 0.10
    refit_on_corner_inliers: bool = True
    # Rotation / translation averaging.
    averaging_rounds: int = 3
    rotation_outlier_deg: float = 3.0
    translation_outlier_m: float = 0.10
    # Track merging and suppression.
    merge_gate_giou: float = -0.6
    merge_affinity_threshold: float = 0.25
    suppress_iou_threshold: float = 0.15
    merge_affinity_on_representatives: bool = False
    # Box refinement.
    ba_enabled: bool = True
    ba_max_iterations: int = 100
    ba_fd_step: float = 1e-6
    ba_rel_tol: float = 1e-10
    ba_step_tol: float = 1e-10
    ba_use_huber: bool = False
    ba_huber_delta: float = 0.01
    ba_dims_min_m: float = 1e-3
    ba_dims_max_m: float = 50.0
    # Orchestration.
    pair_budget: int | None = None
    workers: int = 0  # 0: take BOXSFM_WORKERS from the environment, else serial
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.detection_tau <= 1.0:
            raise ValueError("detection_tau must be in [0, 1]")
        if self.averaging_rounds < 1:
            raise ValueError("averaging_rounds must be >= 1")
        if self.pair_budget is not None and self.pair_budget < 0:
            raise ValueError("pair_budget must be None or >= 0")

    @classmethod
    def class_agnostic(cls, **overrides) -> "RunConfig":
        """Operating point for class-agnostic detectors (tau 0.25, match 0.5)."""
        return cls(**overrides)

    @classmethod
    def class_aware(cls, **overrides) -> "RunConfig":
        """Operating point for class-aware detectors (tau 0.2, match 0.4)."""
        overrides.setdefault("detection_tau", 0.2)
        overrides.setdefault("match_threshold", 0.4)
        return cls(**overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        """Stable content hash of the resolved configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)
