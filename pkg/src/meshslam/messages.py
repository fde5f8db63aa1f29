"""Typed message payloads and their canonical binary forms.

New keyframes carry the complete object definition including the map
points they introduce; keyframe updates carry only changed parts (pose,
visible point ids). Map batches bundle keyframe and map point updates,
either applied immediately (local kind) or staged for atomic promotion
(global kinds).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from meshslam.codec import Reader, Writer
from meshslam.geometry import Pose2
from meshslam.ids import KeyFrameId, MapId, map_point_id_from_int, map_point_id_to_int


class PayloadKind(enum.Enum):
    NEW_KEYFRAME = 1
    KEYFRAME_UPDATE = 2
    MAP_BATCH = 3
    GLOBAL_UPDATE_START = 4
    DISCOVERY = 5
    HEARTBEAT = 6


class Target(enum.Enum):
    NONE = 0
    LM = 1
    LC = 2


class BatchKind(enum.Enum):
    LOCAL = 0
    GBA = 1
    LC = 2
    MM = 3


@dataclass(frozen=True)
class WireObservation:
    mp_id: str
    landmark_id: int
    range: float
    bearing: float


@dataclass(frozen=True)
class WireKeyFrame:
    kf_id: KeyFrameId
    pose: Pose2
    ref_point_count: int
    observations: tuple[WireObservation, ...]


@dataclass(frozen=True)
class WireMapPoint:
    mp_id: str
    x: float
    y: float
    landmark_id: int
    observers: tuple[KeyFrameId, ...] = ()


@dataclass(frozen=True)
class NewKeyFramePayload:
    map_id: MapId
    is_map_origin: bool
    map_init_optimized: bool
    keyframe: WireKeyFrame
    new_points: tuple[WireMapPoint, ...]


@dataclass(frozen=True)
class KeyFrameUpdate:
    kf_id: KeyFrameId
    pose: Pose2
    visible: tuple[str, ...] = ()  # empty means observation set unchanged


@dataclass(frozen=True)
class MapBatch:
    kind: BatchKind
    map_id: MapId
    epoch: int
    seq: int
    final: bool
    kf_updates: tuple[KeyFrameUpdate, ...] = ()
    mp_updates: tuple[WireMapPoint, ...] = ()
    fused: tuple[tuple[str, str], ...] = ()  # (dead id, survivor id)
    absorbed_map: MapId | None = None
    set_init_optimized: bool = False


@dataclass(frozen=True)
class GlobalUpdateStart:
    epoch: int
    map_id: MapId
    kind: BatchKind


@dataclass(frozen=True)
class DiscoveryPayload:
    session: int


@dataclass(frozen=True)
class HeartbeatPayload:
    pass


def _put_kf_id(w: Writer, kid: KeyFrameId) -> None:
    w.u8(kid.origin).u64(kid.seq)


def _get_kf_id(r: Reader) -> KeyFrameId:
    return KeyFrameId(r.u8(), r.u64())


def _put_map_id(w: Writer, mid: MapId) -> None:
    w.u8(mid.origin).u64(mid.counter)


def _get_map_id(r: Reader) -> MapId:
    return MapId(r.u8(), r.u64())


def _put_pose(w: Writer, p: Pose2) -> None:
    w.f64(p.x).f64(p.y).f64(p.theta)


def _get_pose(r: Reader) -> Pose2:
    return Pose2(r.f64(), r.f64(), r.f64())


def _put_mp_ref(w: Writer, mp_id: str) -> None:
    w.u64(map_point_id_to_int(mp_id))


def _get_mp_ref(r: Reader) -> str:
    return map_point_id_from_int(r.u64())


def _put_wire_mp(w: Writer, mp: WireMapPoint) -> None:
    _put_mp_ref(w, mp.mp_id)
    w.f64(mp.x).f64(mp.y).u64(mp.landmark_id)
    w.u32(len(mp.observers))
    for kid in mp.observers:
        _put_kf_id(w, kid)


def _get_wire_mp(r: Reader) -> WireMapPoint:
    mp_id = _get_mp_ref(r)
    x, y = r.f64(), r.f64()
    lm = r.u64()
    observers = tuple(_get_kf_id(r) for _ in range(r.u32()))
    return WireMapPoint(mp_id, x, y, lm, observers)


def encode_payload(payload) -> bytes:
    w = Writer()
    if isinstance(payload, NewKeyFramePayload):
        _put_map_id(w, payload.map_id)
        w.u8(1 if payload.is_map_origin else 0)
        w.u8(1 if payload.map_init_optimized else 0)
        kf = payload.keyframe
        _put_kf_id(w, kf.kf_id)
        _put_pose(w, kf.pose)
        w.u32(kf.ref_point_count)
        w.u32(len(kf.observations))
        for o in kf.observations:
            _put_mp_ref(w, o.mp_id)
            w.u64(o.landmark_id).f64(o.range).f64(o.bearing)
        w.u32(len(payload.new_points))
        for mp in payload.new_points:
            _put_wire_mp(w, mp)
    elif isinstance(payload, KeyFrameUpdate):
        _encode_kf_update(w, payload)
    elif isinstance(payload, MapBatch):
        w.u8(payload.kind.value)
        _put_map_id(w, payload.map_id)
        w.u32(payload.epoch).u32(payload.seq)
        w.u8(1 if payload.final else 0)
        w.u8(1 if payload.set_init_optimized else 0)
        w.u32(len(payload.kf_updates))
        for upd in payload.kf_updates:
            _encode_kf_update(w, upd)
        w.u32(len(payload.mp_updates))
        for mp in payload.mp_updates:
            _put_wire_mp(w, mp)
        w.u32(len(payload.fused))
        for dead, surv in payload.fused:
            _put_mp_ref(w, dead)
            _put_mp_ref(w, surv)
        if payload.absorbed_map is not None:
            w.u8(1)
            _put_map_id(w, payload.absorbed_map)
        else:
            w.u8(0)
    elif isinstance(payload, GlobalUpdateStart):
        w.u32(payload.epoch)
        _put_map_id(w, payload.map_id)
        w.u8(payload.kind.value)
    elif isinstance(payload, DiscoveryPayload):
        w.u64(payload.session)
    elif isinstance(payload, HeartbeatPayload):
        pass
    else:
        raise TypeError(f"cannot encode payload {type(payload)!r}")
    return w.getvalue()


def _encode_kf_update(w: Writer, upd: KeyFrameUpdate) -> None:
    _put_kf_id(w, upd.kf_id)
    _put_pose(w, upd.pose)
    w.u32(len(upd.visible))
    for mp_id in upd.visible:
        _put_mp_ref(w, mp_id)


def _decode_kf_update(r: Reader) -> KeyFrameUpdate:
    kid = _get_kf_id(r)
    pose = _get_pose(r)
    visible = tuple(_get_mp_ref(r) for _ in range(r.u32()))
    return KeyFrameUpdate(kid, pose, visible)


def decode_payload(kind: PayloadKind, data: bytes):
    r = Reader(data)
    if kind is PayloadKind.NEW_KEYFRAME:
        map_id = _get_map_id(r)
        is_origin = r.u8() != 0
        init_opt = r.u8() != 0
        kf_id = _get_kf_id(r)
        pose = _get_pose(r)
        ref_count = r.u32()
        observations = []
        for _ in range(r.u32()):
            mp_id = _get_mp_ref(r)
            observations.append(WireObservation(mp_id, r.u64(), r.f64(), r.f64()))
        new_points = tuple(_get_wire_mp(r) for _ in range(r.u32()))
        kf = WireKeyFrame(kf_id, pose, ref_count, tuple(observations))
        return NewKeyFramePayload(map_id, is_origin, init_opt, kf, new_points)
    if kind is PayloadKind.KEYFRAME_UPDATE:
        return _decode_kf_update(r)
    if kind is PayloadKind.MAP_BATCH:
        bkind = BatchKind(r.u8())
        map_id = _get_map_id(r)
        epoch, seq = r.u32(), r.u32()
        final = r.u8() != 0
        set_init = r.u8() != 0
        kf_updates = tuple(_decode_kf_update(r) for _ in range(r.u32()))
        mp_updates = tuple(_get_wire_mp(r) for _ in range(r.u32()))
        fused = tuple((_get_mp_ref(r), _get_mp_ref(r)) for _ in range(r.u32()))
        absorbed = _get_map_id(r) if r.u8() != 0 else None
        return MapBatch(bkind, map_id, epoch, seq, final, kf_updates,
                        mp_updates, fused, absorbed, set_init)
    if kind is PayloadKind.GLOBAL_UPDATE_START:
        epoch = r.u32()
        map_id = _get_map_id(r)
        return GlobalUpdateStart(epoch, map_id, BatchKind(r.u8()))
    if kind is PayloadKind.DISCOVERY:
        return DiscoveryPayload(r.u64())
    if kind is PayloadKind.HEARTBEAT:
        return HeartbeatPayload()
    raise TypeError(f"cannot decode payload kind {kind!r}")
