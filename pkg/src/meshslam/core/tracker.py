"""Per-frame tracking and keyframe spawning.

Association is mid-term only: a frame observation matches a map point
when the point's origin landmark was observed by one of the most recent
keyframes. Revisits beyond that window intentionally fail to match, so
drift accumulates and long-term loop detection has something to find.
"""

from __future__ import annotations

from meshslam.core import covis
from meshslam.core.bundle import track_pose
from meshslam.core.types import (
    Frame,
    KeyFrame,
    Map,
    MapPoint,
    Observation,
    TrackResult,
    TrackStatus,
)
from meshslam.geometry import Pose2, back_project
from meshslam.ids import IdAllocator

MIN_TRACK_MATCHES = 10


def track_frame(m: Map, last_pose: Pose2, frame: Frame, window: int,
                min_matches: int = MIN_TRACK_MATCHES) -> TrackResult:
    """Estimate the frame pose against the recent-keyframe window.

    Returns LOST (a value, not an error) when matches fall under the
    minimum or the solver diverges.
    """
    recent = m.latest_keyframe_ids(window)
    visible: dict[int, str] = {}
    candidate_ids: set[str] = set()
    for kid in recent:
        candidate_ids |= set(m.keyframes[kid].observations)
    for mp_id in sorted(candidate_ids):
        mp = m.map_points.get(mp_id)
        if mp is None:
            continue
        lm = mp.origin_landmark
        if lm not in visible or mp_id < visible[lm]:
            visible[lm] = mp_id

    matches: dict[str, Observation] = {}
    for obs in frame.observations:
        mp_id = visible.get(obs.landmark_id)
        if mp_id is not None:
            matches[mp_id] = obs

    ref_id = m.latest_keyframe_ids(1)[0]
    ref_count = max(1, m.keyframes[ref_id].ref_point_count)
    ratio = min(1.0, len(matches) / ref_count)

    if len(matches) < min_matches:
        return TrackResult(TrackStatus.LOST, last_pose, matches, ratio)

    guess = last_pose.compose(frame.odometry_delta)
    rows = []
    for mp_id in sorted(matches):
        mp = m.map_points[mp_id]
        o = matches[mp_id]
        rows.append((mp.x, mp.y, o.range, o.bearing))
    pose, diverged = track_pose(rows, guess)
    if diverged:
        return TrackResult(TrackStatus.LOST, pose, matches, ratio, diverged=True)
    return TrackResult(TrackStatus.OK, pose, matches, ratio)


def should_create_keyframe(tr: TrackResult, frames_since_last_kf: int,
                           min_gap: int = 2, ref_ratio: float = 0.80) -> bool:
    """Pure keyframe gate: enough frames elapsed and tracked ratio dropped.

    The ratio test is strictly less-than, so a frame tracking exactly
    the threshold fraction does not spawn a keyframe.
    """
    return frames_since_last_kf >= min_gap and tr.tracked_ratio < ref_ratio


def create_keyframe(frame: Frame, tr: TrackResult, alloc: IdAllocator,
                    m: Map) -> tuple[KeyFrame, list[MapPoint]]:
    """Insert a keyframe for a tracked frame; unmatched observations
    spawn new map points back-projected from the tracked pose."""
    kf_id = alloc.next_keyframe_id()
    observations: dict[str, Observation] = dict(tr.matches)
    matched_landmarks = {o.landmark_id for o in tr.matches.values()}

    new_points: list[MapPoint] = []
    for obs in frame.observations:
        if obs.landmark_id in matched_landmarks:
            continue
        matched_landmarks.add(obs.landmark_id)
        mp_id = alloc.next_map_point_id()
        x, y = back_project(tr.pose, obs.range, obs.bearing)
        new_points.append(MapPoint(mp_id, x, y, obs.landmark_id, observers={kf_id}))
        observations[mp_id] = obs

    kf = KeyFrame(kf_id, tr.pose, observations, m.map_id,
                  ref_point_count=len(tr.matches) + len(new_points))
    m.keyframes[kf_id] = kf
    for mp in new_points:
        m.map_points[mp.id] = mp
    for mp_id in tr.matches:
        m.map_points[mp_id].observers.add(kf_id)
    covis.link_new_keyframe(m, kf_id)
    return kf, new_points
