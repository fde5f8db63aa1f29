"""Map bootstrap from two consecutive frames."""

from __future__ import annotations

from meshslam.core import covis
from meshslam.core.types import Frame, InsufficientParallax, KeyFrame, Map, MapPoint
from meshslam.geometry import Pose2, back_project
from meshslam.ids import IdAllocator

MIN_COMMON_LANDMARKS = 20
MIN_BASELINE_M = 0.01


def initialize_map(f1: Frame, f2: Frame, alloc: IdAllocator) -> Map:
    """Seed a map with two keyframes and the landmarks both frames saw.

    The first keyframe sits at the origin of the new map's frame; the
    second is placed by composing the odometry delta. Each shared
    landmark becomes a map point at the average of the two range-bearing
    back-projections.

    Raises InsufficientParallax when fewer than 20 landmarks are shared
    or the relative motion is under 1 cm.
    """
    obs1 = {o.landmark_id: o for o in f1.observations}
    obs2 = {o.landmark_id: o for o in f2.observations}
    common = sorted(set(obs1) & set(obs2))
    if len(common) < MIN_COMMON_LANDMARKS:
        raise InsufficientParallax(
            f"{len(common)} common landmarks < {MIN_COMMON_LANDMARKS}"
        )
    if f2.odometry_delta.translation_norm() < MIN_BASELINE_M:
        raise InsufficientParallax("relative motion below 0.01 m")

    map_id = alloc.next_map_id()
    pose1 = Pose2()
    pose2 = pose1.compose(f2.odometry_delta)

    kf1 = KeyFrame(alloc.next_keyframe_id(), pose1, {}, map_id)
    kf2 = KeyFrame(alloc.next_keyframe_id(), pose2, {}, map_id)
    m = Map(map_id, kf1.id)
    m.keyframes[kf1.id] = kf1
    m.keyframes[kf2.id] = kf2

    for lm in common:
        mp_id = alloc.next_map_point_id()
        x1, y1 = back_project(pose1, obs1[lm].range, obs1[lm].bearing)
        x2, y2 = back_project(pose2, obs2[lm].range, obs2[lm].bearing)
        mp = MapPoint(mp_id, 0.5 * (x1 + x2), 0.5 * (y1 + y2), lm,
                      observers={kf1.id, kf2.id})
        m.map_points[mp_id] = mp
        kf1.observations[mp_id] = obs1[lm]
        kf2.observations[mp_id] = obs2[lm]

    kf1.ref_point_count = len(common)
    kf2.ref_point_count = len(common)
    covis.link_new_keyframe(m, kf2.id)
    return m
