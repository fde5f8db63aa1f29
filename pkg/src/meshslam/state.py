"""Two-tier replicated SLAM state.

The promoted tier (``slam``) only ever holds complete, internally
consistent maps; everything else a node has heard about sits in staging
buffers until its dependencies arrive. Staging plus promoted content
together form the node's full knowledge. Conflicting updates resolve by
highest batch sequence, stale-epoch batches are discarded, and global
updates promote atomically only once every batch of the epoch is held.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

from meshslam.codec import Writer
from meshslam.core import covis
from meshslam.core.types import KeyFrame, Map, MapPoint, Observation, SlamError
from meshslam.ids import KeyFrameId, MapId, map_point_id_to_int
from meshslam.messages import (
    BatchKind,
    KeyFrameUpdate,
    MapBatch,
    NewKeyFramePayload,
    WireMapPoint,
)

DIGEST_SCHEMA = 1


class EpochMismatch(SlamError):
    """A global batch arrived for an epoch older than the current one."""


class PromotionOutcome(enum.Enum):
    PROMOTED = "promoted"
    STAGED = "staged"
    DUPLICATE = "duplicate"


# Latest-writer ordering across update sources: a newer pause epoch always
# wins; within an epoch, local refinements (phase 1) outrank the global
# snapshot (phase 0) they follow; batch sequence breaks the remaining ties.
UpdateKey = tuple[int, int, int]

PHASE_GLOBAL = 0
PHASE_LOCAL = 1


def update_key(epoch: int, phase: int, seq: int) -> UpdateKey:
    return (epoch, phase, seq)


@dataclass(frozen=True)
class StateDigest:
    value: str

    def __post_init__(self) -> None:
        assert len(self.value) == 32


@dataclass
class SystemState:
    slam: dict[MapId, Map] = field(default_factory=dict)
    dirty_kfs: set[KeyFrameId] = field(default_factory=set)
    dirty_mps: set[str] = field(default_factory=set)
    paused: bool = False
    pause_epoch: int = 0

    # Staging buffers: the superset of knowledge beyond the promoted tier.
    staged_kfs: dict[MapId, dict[KeyFrameId, NewKeyFramePayload]] = field(
        default_factory=dict)
    staged_kf_updates: dict[KeyFrameId, list[tuple[UpdateKey, KeyFrameUpdate]]] = \
        field(default_factory=dict)
    staged_mp_updates: dict[str, list[tuple[UpdateKey, WireMapPoint]]] = field(
        default_factory=dict)
    staged_global: dict[int, dict[int, MapBatch]] = field(default_factory=dict)
    global_final_seq: dict[int, int] = field(default_factory=dict)
    pending_local: dict[int, list[MapBatch]] = field(default_factory=dict)
    globally_optimized: set[MapId] = field(default_factory=set)
    # Tombstones from point fusion and map merging: a message built before
    # the event may still reference the dead id; arrivals re-key through
    # these maps.
    fused_forward: dict[str, str] = field(default_factory=dict)
    absorbed_forward: dict[MapId, MapId] = field(default_factory=dict)

    # Latest-writer bookkeeping and accounting.
    applied_kf_seq: dict[KeyFrameId, UpdateKey] = field(default_factory=dict)
    applied_mp_seq: dict[str, UpdateKey] = field(default_factory=dict)
    kf_map_index: dict[KeyFrameId, MapId] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)

    def bump(self, key: str, n: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + n

    def find_keyframe(self, kf_id: KeyFrameId) -> KeyFrame | None:
        map_id = self.kf_map_index.get(kf_id)
        if map_id is None:
            return None
        m = self.slam.get(map_id)
        if m is None:
            return None
        return m.keyframes.get(kf_id)

    def find_map_of(self, kf_id: KeyFrameId) -> Map | None:
        map_id = self.kf_map_index.get(kf_id)
        return self.slam.get(map_id) if map_id is not None else None

    def register_map(self, m: Map) -> None:
        """Adopt a locally constructed map into the promoted tier."""
        self.slam[m.map_id] = m
        for kf_id in m.keyframes:
            self.kf_map_index[kf_id] = m.map_id

    def mark_dirty(self, kf_ids, mp_ids) -> None:
        self.dirty_kfs |= set(kf_ids)
        self.dirty_mps |= set(mp_ids)

    def accounting(self) -> dict[str, int]:
        """Reconciliation view: staged buffer depths plus promoted sizes."""
        return {
            "promoted_maps": len(self.slam),
            "promoted_kfs": sum(len(m.keyframes) for m in self.slam.values()),
            "promoted_mps": sum(len(m.map_points) for m in self.slam.values()),
            "staged_new_kfs": sum(len(v) for v in self.staged_kfs.values()),
            "staged_kf_updates": sum(len(v) for v in self.staged_kf_updates.values()),
            "staged_mp_updates": sum(len(v) for v in self.staged_mp_updates.values()),
            "staged_global_batches": sum(len(v) for v in self.staged_global.values()),
            "pending_local_batches": sum(len(v) for v in self.pending_local.values()),
            **self.counters,
        }


def observe_epoch(state: SystemState, epoch: int) -> None:
    """Learn that a global update epoch exists; newer epochs pause the node
    even when the start notification itself was delayed or lost."""
    if epoch > state.pause_epoch:
        state.pause_epoch = epoch
        state.paused = True


def resolve_mp_id(state: SystemState, mp_id: str) -> str:
    """Chase fusion tombstones to the surviving map point id."""
    seen = []
    while mp_id in state.fused_forward:
        seen.append(mp_id)
        mp_id = state.fused_forward[mp_id]
    for dead in seen[:-1]:
        state.fused_forward[dead] = mp_id  # path compression
    return mp_id


def note_fusions(state: SystemState, fused) -> None:
    for dead, surv in dict(fused).items():
        if dead != surv:
            state.fused_forward[dead] = surv


def resolve_map_id(state: SystemState, map_id: MapId) -> MapId:
    while map_id in state.absorbed_forward:
        map_id = state.absorbed_forward[map_id]
    return map_id


def note_merge(state: SystemState, absorbed: MapId | None,
               surviving: MapId) -> None:
    if absorbed is not None and absorbed != surviving:
        state.absorbed_forward[absorbed] = surviving
        # Anything buffered under the dead map retries under the survivor.
        buffered = state.staged_kfs.pop(absorbed, None)
        if buffered:
            state.staged_kfs.setdefault(surviving, {}).update(buffered)


def _payload_resolves(state: SystemState, m: Map, payload: NewKeyFramePayload) -> bool:
    own = {resolve_mp_id(state, mp.mp_id) for mp in payload.new_points}
    for obs in payload.keyframe.observations:
        mp_id = resolve_mp_id(state, obs.mp_id)
        if mp_id not in own and mp_id not in m.map_points:
            return False
    return True


def _insert_keyframe(state: SystemState, m: Map, payload: NewKeyFramePayload) -> None:
    kf_wire = payload.keyframe
    for mp in payload.new_points:
        mp_id = resolve_mp_id(state, mp.mp_id)
        if mp_id == mp.mp_id and mp_id not in m.map_points:
            m.map_points[mp_id] = MapPoint(
                mp_id, mp.x, mp.y, mp.landmark_id, observers=set()
            )
    # Mirror fusion semantics: identity-keyed observations first, then
    # re-keyed ones only where the survivor is not already observed.
    observations: dict[str, Observation] = {}
    rekeyed: list[tuple[str, Observation]] = []
    for o in kf_wire.observations:
        mp_id = resolve_mp_id(state, o.mp_id)
        value = Observation(o.landmark_id, o.range, o.bearing)
        if mp_id == o.mp_id:
            observations[mp_id] = value
        else:
            rekeyed.append((mp_id, value))
    for mp_id, value in rekeyed:
        if mp_id not in observations:
            observations[mp_id] = value
    kf = KeyFrame(kf_wire.kf_id, kf_wire.pose, observations, m.map_id,
                  ref_point_count=kf_wire.ref_point_count)
    # Staging soundness: promotion must never leave dangling references.
    assert all(mp_id in m.map_points for mp_id in observations)
    m.keyframes[kf.id] = kf
    state.kf_map_index[kf.id] = m.map_id
    for mp_id in observations:
        m.map_points[mp_id].observers.add(kf.id)
    covis.link_new_keyframe(m, kf.id)

    # Replay any updates that were waiting on this keyframe or its points.
    waiting = state.staged_kf_updates.pop(kf.id, None)
    if waiting:
        key, upd = max(waiting, key=lambda item: item[0])
        _apply_kf_update_now(state, kf, upd, key)
    for mp in payload.new_points:
        waiting_mp = state.staged_mp_updates.pop(mp.mp_id, None)
        if waiting_mp and mp.mp_id in m.map_points:
            key, wmp = max(waiting_mp, key=lambda item: item[0])
            _apply_mp_update_now(state, m, wmp, key)


def apply_new_keyframe(state: SystemState, payload: NewKeyFramePayload
                       ) -> PromotionOutcome:
    """Insert a complete keyframe (with its new points) or stage it.

    Re-delivery of an already promoted keyframe is a no-op. A keyframe
    whose map is unknown, or whose referenced points have not arrived
    yet, is buffered and retried as dependencies promote.
    """
    state.bump("new_kf_received")
    kf_id = payload.keyframe.kf_id
    if state.find_keyframe(kf_id) is not None:
        return PromotionOutcome.DUPLICATE

    map_id = resolve_map_id(state, payload.map_id)
    m = state.slam.get(map_id)
    if m is None:
        if payload.is_map_origin:
            optimized = (payload.map_init_optimized
                         or map_id in state.globally_optimized)
            m = Map(map_id, kf_id, initialized_optimized=optimized)
            state.slam[map_id] = m
        else:
            state.staged_kfs.setdefault(map_id, {})[kf_id] = payload
            return PromotionOutcome.STAGED

    if not _payload_resolves(state, m, payload):
        state.staged_kfs.setdefault(map_id, {})[kf_id] = payload
        return PromotionOutcome.STAGED

    _insert_keyframe(state, m, payload)
    if payload.map_init_optimized:
        m.initialized_optimized = True
    _drain_staged_keyframes(state, map_id)
    return PromotionOutcome.PROMOTED


def _drain_staged_keyframes(state: SystemState, map_id: MapId) -> None:
    """Promote staged keyframes whose dependencies have now arrived."""
    progress = True
    while progress:
        progress = False
        buffered = state.staged_kfs.get(map_id)
        if not buffered:
            return
        m = state.slam.get(map_id)
        if m is None:
            return
        for kf_id in sorted(buffered):
            payload = buffered[kf_id]
            if kf_id in m.keyframes:
                del buffered[kf_id]
                progress = True
                continue
            if _payload_resolves(state, m, payload):
                del buffered[kf_id]
                _insert_keyframe(state, m, payload)
                if payload.map_init_optimized:
                    m.initialized_optimized = True
                progress = True
        if not buffered:
            del state.staged_kfs[map_id]


_NEVER: UpdateKey = (-1, -1, -1)


def _apply_kf_update_now(state: SystemState, kf: KeyFrame, upd: KeyFrameUpdate,
                         key: UpdateKey) -> None:
    if key <= state.applied_kf_seq.get(kf.id, _NEVER):
        return
    state.applied_kf_seq[kf.id] = key
    kf.pose = upd.pose


def apply_keyframe_update(state: SystemState, upd: KeyFrameUpdate,
                          key: UpdateKey) -> PromotionOutcome:
    """Overwrite a keyframe's changed parts, or stage until it exists.

    Conflicts resolve to the highest update key (epoch, phase, batch
    sequence); a stale key is reported as DUPLICATE and ignored.
    """
    kf = state.find_keyframe(upd.kf_id)
    if kf is None:
        state.staged_kf_updates.setdefault(upd.kf_id, []).append((key, upd))
        return PromotionOutcome.STAGED
    if key <= state.applied_kf_seq.get(kf.id, _NEVER):
        return PromotionOutcome.DUPLICATE
    _apply_kf_update_now(state, kf, upd, key)
    return PromotionOutcome.PROMOTED


def _apply_mp_update_now(state: SystemState, m: Map, wmp: WireMapPoint,
                         key: UpdateKey) -> None:
    if key <= state.applied_mp_seq.get(wmp.mp_id, _NEVER):
        return
    state.applied_mp_seq[wmp.mp_id] = key
    mp = m.map_points[wmp.mp_id]
    mp.x, mp.y = wmp.x, wmp.y
    if wmp.observers:
        mp.observers = {k for k in wmp.observers if k in m.keyframes}


def apply_map_point_update(state: SystemState, map_id: MapId, wmp: WireMapPoint,
                           key: UpdateKey) -> PromotionOutcome:
    m = state.slam.get(map_id)
    if m is not None and wmp.mp_id in m.map_points:
        if key <= state.applied_mp_seq.get(wmp.mp_id, _NEVER):
            return PromotionOutcome.DUPLICATE
        _apply_mp_update_now(state, m, wmp, key)
        return PromotionOutcome.PROMOTED
    if m is not None and wmp.observers:
        # Complete definition: create rather than stage.
        m.map_points[wmp.mp_id] = MapPoint(
            wmp.mp_id, wmp.x, wmp.y, wmp.landmark_id,
            observers={k for k in wmp.observers if k in m.keyframes},
        )
        state.applied_mp_seq[wmp.mp_id] = key
        return PromotionOutcome.PROMOTED
    state.staged_mp_updates.setdefault(wmp.mp_id, []).append((key, wmp))
    return PromotionOutcome.STAGED


def apply_map_batch(state: SystemState, batch: MapBatch) -> PromotionOutcome:
    """Apply a local batch immediately; stage global batches per epoch and
    promote the whole epoch atomically once sequence 0..final is held.

    Raises EpochMismatch for batches of an epoch older than the current
    one (superseded data).
    """
    state.bump("map_batches_received")
    if batch.kind is BatchKind.LOCAL:
        if batch.epoch < state.pause_epoch:
            raise EpochMismatch(
                f"local batch epoch {batch.epoch} < {state.pause_epoch}")
        if batch.epoch > state.pause_epoch:
            observe_epoch(state, batch.epoch)
            state.pending_local.setdefault(batch.epoch, []).append(batch)
            return PromotionOutcome.STAGED
        _apply_local_batch(state, batch)
        return PromotionOutcome.PROMOTED

    if batch.epoch < state.pause_epoch:
        raise EpochMismatch(
            f"global batch epoch {batch.epoch} < {state.pause_epoch}")
    observe_epoch(state, batch.epoch)
    per_epoch = state.staged_global.setdefault(batch.epoch, {})
    per_epoch[batch.seq] = batch
    if batch.final:
        state.global_final_seq[batch.epoch] = batch.seq
    final = state.global_final_seq.get(batch.epoch)
    if final is not None and all(s in per_epoch for s in range(final + 1)):
        _promote_global(state, batch.epoch)
        return PromotionOutcome.PROMOTED
    return PromotionOutcome.STAGED


def _apply_local_batch(state: SystemState, batch: MapBatch) -> None:
    key = update_key(batch.epoch, PHASE_LOCAL, batch.seq)
    for upd in batch.kf_updates:
        apply_keyframe_update(state, upd, key)
    for wmp in batch.mp_updates:
        apply_map_point_update(state, batch.map_id, wmp, key)
    if batch.set_init_optimized:
        m = state.slam.get(batch.map_id)
        if m is not None:
            m.initialized_optimized = True


def _promote_global(state: SystemState, epoch: int) -> None:
    batches = [state.staged_global[epoch][s]
               for s in sorted(state.staged_global[epoch])]
    del state.staged_global[epoch]
    state.global_final_seq.pop(epoch, None)
    head = batches[0]
    surviving = state.slam.get(head.map_id)

    # Re-home an absorbed map's entities under the surviving map id.
    absorbed = next((b.absorbed_map for b in batches if b.absorbed_map), None)
    note_merge(state, absorbed, head.map_id)
    if absorbed is not None and absorbed in state.slam and surviving is not None:
        lost = state.slam.pop(absorbed)
        for kf_id in sorted(lost.keyframes):
            kf = lost.keyframes[kf_id]
            kf.map_id = surviving.map_id
            surviving.keyframes[kf_id] = kf
            state.kf_map_index[kf_id] = surviving.map_id
        for mp_id in sorted(lost.map_points):
            surviving.map_points[mp_id] = lost.map_points[mp_id]

    for b in batches:
        note_fusions(state, dict(b.fused))
    if surviving is not None:
        for b in batches:
            for dead, surv in b.fused:
                _apply_fusion(surviving, dead, surv)
    for b in batches:
        key = update_key(epoch, PHASE_GLOBAL, b.seq)
        for upd in b.kf_updates:
            kf = surviving.keyframes.get(upd.kf_id) if surviving else None
            if kf is None:
                # Keyframe (or whole map) still in flight: remember the
                # authoritative pose for replay at insertion time.
                state.staged_kf_updates.setdefault(upd.kf_id, []).append(
                    (key, upd))
                continue
            kf.pose = upd.pose
            state.applied_kf_seq[kf.id] = max(
                state.applied_kf_seq.get(kf.id, _NEVER), key)
        for wmp in b.mp_updates:
            mp = surviving.map_points.get(wmp.mp_id) if surviving else None
            if mp is None and surviving is not None:
                mp = MapPoint(wmp.mp_id, wmp.x, wmp.y, wmp.landmark_id)
                surviving.map_points[wmp.mp_id] = mp
            if mp is None:
                state.staged_mp_updates.setdefault(wmp.mp_id, []).append(
                    (key, wmp))
                continue
            mp.x, mp.y = wmp.x, wmp.y
            if wmp.observers:
                mp.observers = {k for k in wmp.observers
                                if k in surviving.keyframes}
            state.applied_mp_seq[wmp.mp_id] = max(
                state.applied_mp_seq.get(wmp.mp_id, _NEVER), key)
    state.globally_optimized.add(head.map_id)
    if surviving is not None:
        surviving.initialized_optimized = True
        # Observer sets are derived from keyframe observations; rebuilding
        # keeps them identical no matter when each keyframe arrived.
        _rebuild_observers(surviving)
        covis.rebuild_covisibility(surviving)

    state.paused = False
    state.bump("global_promotions")

    # Local batches that raced ahead of this promotion apply now, and
    # keyframes buffered against re-homed or fused entities get retried.
    for pending in state.pending_local.pop(epoch, []):
        _apply_local_batch(state, pending)
    _drain_staged_keyframes(state, head.map_id)


def _rebuild_observers(m: Map) -> None:
    for mp in m.map_points.values():
        mp.observers = set()
    for kf_id in sorted(m.keyframes):
        for mp_id in m.keyframes[kf_id].observations:
            mp = m.map_points.get(mp_id)
            if mp is not None:
                mp.observers.add(kf_id)


def _apply_fusion(m: Map, dead_id: str, surv_id: str) -> None:
    dead = m.map_points.get(dead_id)
    surv = m.map_points.get(surv_id)
    if dead is None or surv is None or dead_id == surv_id:
        return
    for kf_id in sorted(dead.observers):
        kf = m.keyframes.get(kf_id)
        if kf is None:
            continue
        obs = kf.observations.pop(dead_id, None)
        if obs is not None and surv_id not in kf.observations:
            kf.observations[surv_id] = obs
        surv.observers.add(kf_id)
    del m.map_points[dead_id]


def collect_dirty(state: SystemState, center: KeyFrameId, n_covisible: int,
                  schedule: list[int], seq_start: int, map_id: MapId,
                  set_init_optimized: bool = False) -> list[MapBatch]:
    """Build local batches from the dirty entities around a center keyframe.

    Covers center plus its strongest covisible neighbors, intersected
    with the dirty sets; collected flags are cleared, anything outside
    the window stays dirty. Batch sizes follow the caller's growth
    schedule (last entry repeats).
    """
    m = state.slam.get(map_id)
    if m is None or center not in m.keyframes:
        return []
    window = {center, *covis.strongest_covisible(m, center, n_covisible)}
    kf_ids = sorted(kid for kid in window if kid in state.dirty_kfs)
    mp_pool: set[str] = set()
    for kid in window:
        mp_pool |= set(m.keyframes[kid].observations)
    mp_ids = sorted(mid for mid in mp_pool
                    if mid in state.dirty_mps and mid in m.map_points)
    if not kf_ids and not mp_ids and not set_init_optimized:
        return []

    for kid in kf_ids:
        state.dirty_kfs.discard(kid)
        m.keyframes[kid].dirty = False
    for mid in mp_ids:
        state.dirty_mps.discard(mid)
        m.map_points[mid].dirty = False

    chunks: list[list[KeyFrameId]] = []
    i = 0
    si = 0
    while i < len(kf_ids):
        size = schedule[min(si, len(schedule) - 1)]
        chunks.append(kf_ids[i:i + size])
        i += size
        si += 1
    if not chunks:
        chunks = [[]]

    n_batches = len(chunks)
    per = (len(mp_ids) + n_batches - 1) // n_batches if mp_ids else 0
    batches = []
    for bi, chunk in enumerate(chunks):
        kf_updates = tuple(
            KeyFrameUpdate(kid, m.keyframes[kid].pose) for kid in chunk
        )
        mp_slice = mp_ids[bi * per:(bi + 1) * per] if per else []
        mp_updates = tuple(
            WireMapPoint(mid, m.map_points[mid].x, m.map_points[mid].y,
                         m.map_points[mid].origin_landmark)
            for mid in mp_slice
        )
        batches.append(MapBatch(
            BatchKind.LOCAL, map_id, state.pause_epoch, seq_start + bi,
            final=False, kf_updates=kf_updates, mp_updates=mp_updates,
            set_init_optimized=set_init_optimized and bi == 0,
        ))
    return batches


def _fixed_decimal(w: Writer, value: float) -> None:
    v = round(value, 9)
    if v == 0.0:
        v = 0.0  # normalize -0.0
    w.raw(f"{v:+021.9f}".encode("ascii"))


def canonical_bytes(state: SystemState) -> bytes:
    """Canonical serialization of the promoted tier for digesting."""
    w = Writer()
    w.u8(DIGEST_SCHEMA)
    w.u32(len(state.slam))
    for map_id in sorted(state.slam):
        m = state.slam[map_id]
        w.u8(map_id.origin).u64(map_id.counter)
        w.u8(m.origin_kf.origin).u64(m.origin_kf.seq)
        w.u8(1 if m.initialized_optimized else 0)
        w.u32(len(m.keyframes))
        for kf_id in sorted(m.keyframes):
            kf = m.keyframes[kf_id]
            w.u8(kf_id.origin).u64(kf_id.seq)
            _fixed_decimal(w, kf.pose.x)
            _fixed_decimal(w, kf.pose.y)
            _fixed_decimal(w, kf.pose.theta)
            w.u32(kf.ref_point_count)
            w.u32(len(kf.observations))
            for mp_id in sorted(kf.observations):
                o = kf.observations[mp_id]
                w.u64(map_point_id_to_int(mp_id))
                w.u64(o.landmark_id)
                _fixed_decimal(w, o.range)
                _fixed_decimal(w, o.bearing)
            w.u32(len(kf.covisible))
            for other in sorted(kf.covisible):
                w.u8(other.origin).u64(other.seq)
                w.u32(kf.covisible[other])
        w.u32(len(m.map_points))
        for mp_id in sorted(m.map_points):
            mp = m.map_points[mp_id]
            w.u64(map_point_id_to_int(mp_id))
            _fixed_decimal(w, mp.x)
            _fixed_decimal(w, mp.y)
            w.u64(mp.origin_landmark)
            w.u32(len(mp.observers))
            for kid in sorted(mp.observers):
                w.u8(kid.origin).u64(kid.seq)
    return w.getvalue()


def canonical_digest(state: SystemState) -> StateDigest:
    """128-bit mixing-hash digest of the canonical promoted-state bytes."""
    h = hashlib.blake2b(canonical_bytes(state), digest_size=16)
    return StateDigest(h.hexdigest())
