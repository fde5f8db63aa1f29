"""Long-term association: loop detection, loop closure, map merging."""

from __future__ import annotations

from meshslam.core import covis
from meshslam.core.alignment import apply_alignment, compute_alignment
from meshslam.core.bundle import global_bundle_adjust
from meshslam.core.types import (
    CandidateKind,
    GlobalUpdateRecord,
    InsufficientOverlap,
    KeyFrame,
    LoopCandidate,
    Map,
    MapPoint,
    UpdateKind,
)
from meshslam.geometry import Pose2, wrap_angle
from meshslam.ids import KeyFrameId, MapId

DEFAULT_TAU = 0.4
MIN_MERGE_PAIRS = 3


def signature(m: Map, kf: KeyFrame) -> set[int]:
    """Ground-truth landmark ids behind a keyframe's observed map points."""
    sig = set()
    for mp_id in kf.observations:
        mp = m.map_points.get(mp_id)
        if mp is not None:
            sig.add(mp.origin_landmark)
    return sig


def detect_loop_or_merge(maps: dict[MapId, Map], kf: KeyFrame,
                         tau: float = DEFAULT_TAU) -> LoopCandidate | None:
    """Best landmark-overlap candidate outside kf's covisible neighborhood.

    Scans every keyframe of every map except those within two
    covisibility hops of kf; returns the highest-Jaccard keyframe at or
    above tau, ties going to the smaller keyframe id. Same-map hits are
    loop closures, cross-map hits are merge candidates.
    """
    own_map = maps[kf.map_id]
    sig = signature(own_map, kf)
    if not sig:
        return None
    excluded = covis.covisible_within_hops(own_map, kf.id, 2)

    best: LoopCandidate | None = None
    for map_id in sorted(maps):
        m = maps[map_id]
        for other_id in sorted(m.keyframes):
            if map_id == kf.map_id and other_id in excluded:
                continue
            other_sig = signature(m, m.keyframes[other_id])
            if not other_sig:
                continue
            inter = len(sig & other_sig)
            if inter == 0:
                continue
            jaccard = inter / len(sig | other_sig)
            if jaccard >= tau and (best is None or jaccard > best.similarity):
                kind = (CandidateKind.LOOP if map_id == kf.map_id
                        else CandidateKind.MERGE)
                best = LoopCandidate(kind, kf.id, other_id, map_id, jaccard)
    return best


def _age_key(mp: MapPoint) -> tuple[KeyFrameId, str]:
    return (min(mp.observers), mp.id)


def _fuse_pair(m: Map, a_id: str, b_id: str) -> tuple[str, str]:
    """Fuse two duplicate map points; the older one survives.

    Returns (dead_id, survivor_id). A keyframe observing both keeps the
    survivor's observation.
    """
    a, b = m.map_points[a_id], m.map_points[b_id]
    dead, surv = (b, a) if _age_key(a) <= _age_key(b) else (a, b)
    for kf_id in sorted(dead.observers):
        kf = m.keyframes.get(kf_id)
        if kf is None:
            continue
        obs = kf.observations.pop(dead.id, None)
        if obs is not None and surv.id not in kf.observations:
            kf.observations[surv.id] = obs
        surv.observers.add(kf_id)
    del m.map_points[dead.id]
    return dead.id, surv.id


def _landmark_reps(m: Map, kf: KeyFrame | None = None) -> dict[int, str]:
    """One deterministic representative map point per landmark.

    Restricted to a keyframe's observations when kf is given, otherwise
    over the whole map.
    """
    reps: dict[int, str] = {}
    ids = kf.observations.keys() if kf is not None else m.map_points.keys()
    for mp_id in sorted(ids):
        mp = m.map_points.get(mp_id)
        if mp is None:
            continue
        lm = mp.origin_landmark
        if lm not in reps:
            reps[lm] = mp_id
    return reps


def close_loop(m: Map, cand: LoopCandidate) -> GlobalUpdateRecord:
    """Fuse duplicate landmarks between the two matched keyframes and run
    a global adjustment; the fusion itself is the loop constraint."""
    assert cand.kind is CandidateKind.LOOP
    kf = m.keyframes[cand.kf_id]
    other = m.keyframes[cand.other_id]
    reps_a = _landmark_reps(m, kf)
    reps_b = _landmark_reps(m, other)

    fused: dict[str, str] = {}
    for lm in sorted(set(reps_a) & set(reps_b)):
        a_id, b_id = reps_a[lm], reps_b[lm]
        if a_id == b_id or a_id not in m.map_points or b_id not in m.map_points:
            continue
        dead, surv = _fuse_pair(m, a_id, b_id)
        fused[dead] = surv

    covis.rebuild_covisibility(m)
    dirty_kfs, dirty_mps = global_bundle_adjust(m)
    return GlobalUpdateRecord(UpdateKind.LC, m.map_id, sorted(dirty_kfs),
                              sorted(dirty_mps), fused)


def merge_maps(maps: dict[MapId, Map], cand: LoopCandidate
               ) -> GlobalUpdateRecord:
    """Align, re-home, and fuse two maps; the smaller one is absorbed.

    Alignment pairs come from landmarks common to both maps (rigid, no
    scale). Raises InsufficientOverlap below 3 matched pairs.
    """
    assert cand.kind is CandidateKind.MERGE
    m_a = maps[cand.other_map]  # the matched older map
    kf = None
    for m in maps.values():
        if cand.kf_id in m.keyframes:
            kf = m.keyframes[cand.kf_id]
            break
    assert kf is not None and kf.map_id != cand.other_map
    m_b = maps[kf.map_id]

    if len(m_a.keyframes) >= len(m_b.keyframes):
        surv_map, lost_map = m_a, m_b
    elif len(m_b.keyframes) > len(m_a.keyframes):
        surv_map, lost_map = m_b, m_a
    if len(m_a.keyframes) == len(m_b.keyframes):
        surv_map, lost_map = ((m_a, m_b) if m_a.map_id < m_b.map_id
                              else (m_b, m_a))

    reps_lost = _landmark_reps(lost_map)
    reps_surv = _landmark_reps(surv_map)
    common = sorted(set(reps_lost) & set(reps_surv))
    if len(common) < MIN_MERGE_PAIRS:
        raise InsufficientOverlap(f"{len(common)} matched pairs < {MIN_MERGE_PAIRS}")

    pairs = []
    for lm in common:
        lp = lost_map.map_points[reps_lost[lm]]
        sp = surv_map.map_points[reps_surv[lm]]
        pairs.append(((lp.x, lp.y), (sp.x, sp.y)))
    transform = compute_alignment(pairs, with_scale=False)
    _, d_theta, _, _ = transform

    # Re-home the losing map's content into the survivor's frame.
    for kf_id in sorted(lost_map.keyframes):
        moved = lost_map.keyframes[kf_id]
        nx, ny = apply_alignment(transform, moved.pose.x, moved.pose.y)
        moved.pose = Pose2(nx, ny, wrap_angle(moved.pose.theta + d_theta))
        moved.map_id = surv_map.map_id
        surv_map.keyframes[kf_id] = moved
    for mp_id in sorted(lost_map.map_points):
        mp = lost_map.map_points[mp_id]
        mp.x, mp.y = apply_alignment(transform, mp.x, mp.y)
        surv_map.map_points[mp_id] = mp
    absorbed_id = lost_map.map_id
    del maps[absorbed_id]

    fused: dict[str, str] = {}
    for lm in common:
        a_id, b_id = reps_lost[lm], reps_surv[lm]
        if a_id in surv_map.map_points and b_id in surv_map.map_points:
            dead, surv = _fuse_pair(surv_map, a_id, b_id)
            fused[dead] = surv

    covis.rebuild_covisibility(surv_map)
    dirty_kfs, dirty_mps = global_bundle_adjust(surv_map)
    return GlobalUpdateRecord(UpdateKind.MM, surv_map.map_id, sorted(dirty_kfs),
                              sorted(dirty_mps), fused, absorbed_map=absorbed_id)
