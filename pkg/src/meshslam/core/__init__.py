from meshslam.core.alignment import apply_alignment, compute_alignment
from meshslam.core.bundle import (
    global_bundle_adjust,
    local_bundle_adjust,
    map_cost,
    track_pose,
)
from meshslam.core.initializer import initialize_map
from meshslam.core.loops import close_loop, detect_loop_or_merge, merge_maps
from meshslam.core.tracker import create_keyframe, should_create_keyframe, track_frame
from meshslam.core.types import (
    CandidateKind,
    DegenerateConfiguration,
    Frame,
    GlobalUpdateRecord,
    InsufficientOverlap,
    InsufficientParallax,
    KeyFrame,
    LoopCandidate,
    Map,
    MapPoint,
    Observation,
    SingularSystem,
    SlamError,
    TrackResult,
    TrackStatus,
    UpdateKind,
)

__all__ = [
    "CandidateKind",
    "DegenerateConfiguration",
    "Frame",
    "GlobalUpdateRecord",
    "InsufficientOverlap",
    "InsufficientParallax",
    "KeyFrame",
    "LoopCandidate",
    "Map",
    "MapPoint",
    "Observation",
    "SingularSystem",
    "SlamError",
    "TrackResult",
    "TrackStatus",
    "UpdateKind",
    "apply_alignment",
    "close_loop",
    "compute_alignment",
    "create_keyframe",
    "detect_loop_or_merge",
    "global_bundle_adjust",
    "initialize_map",
    "local_bundle_adjust",
    "map_cost",
    "merge_maps",
    "should_create_keyframe",
    "track_frame",
    "track_pose",
]
