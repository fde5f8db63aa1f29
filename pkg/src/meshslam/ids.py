"""Identifiers for keyframes, map points, and maps.

Map point ids are hashed strings rather than plain counters so several
nodes can mint them concurrently without coordination; the hash input is
(origin role byte, per-node counter), which makes minting reproducible
and collision-free (the mixer is a bijection on 64-bit inputs).
"""

from __future__ import annotations

from dataclasses import dataclass

_MASK64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    """64-bit mixing hash (splitmix64 finalizer); bijective on u64."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True, order=True)
class KeyFrameId:
    """Totally ordered by (origin, seq); origin is the minting role's code."""

    origin: int
    seq: int

    def __str__(self) -> str:
        return f"kf:{self.origin}:{self.seq}"


@dataclass(frozen=True, order=True)
class MapId:
    origin: int
    counter: int

    def __str__(self) -> str:
        return f"map:{self.origin}:{self.counter}"


def mint_map_point_id(origin: int, counter: int) -> str:
    """Deterministic 16-char lowercase hex id for a (node, counter) pair."""
    if not 0 <= origin < 256:
        raise ValueError(f"origin byte out of range: {origin}")
    if not 0 <= counter < (1 << 56):
        raise ValueError(f"counter out of range: {counter}")
    return f"{splitmix64((origin << 56) | counter):016x}"


def map_point_id_to_int(mp_id: str) -> int:
    """Parse the 16-hex-char map point id to its u64; exact round-trip."""
    if len(mp_id) != 16:
        raise ValueError(f"bad map point id length: {mp_id!r}")
    return int(mp_id, 16)


def map_point_id_from_int(value: int) -> str:
    return f"{value & _MASK64:016x}"


class IdAllocator:
    """Per-node monotonic counters for keyframe, map point, and map ids."""

    def __init__(self, origin: int):
        self.origin = origin
        self._kf_seq = 0
        self._mp_counter = 0
        self._map_counter = 0

    def next_keyframe_id(self) -> KeyFrameId:
        kid = KeyFrameId(self.origin, self._kf_seq)
        self._kf_seq += 1
        return kid

    def next_map_point_id(self) -> str:
        mp = mint_map_point_id(self.origin, self._mp_counter)
        self._mp_counter += 1
        return mp

    def next_map_id(self) -> MapId:
        mid = MapId(self.origin, self._map_counter)
        self._map_counter += 1
        return mid
