from hypothesis import given, strategies as st

from meshslam.ids import (
    IdAllocator,
    KeyFrameId,
    mint_map_point_id,
    map_point_id_from_int,
    map_point_id_to_int,
    splitmix64,
)


def test_mint_is_deterministic():
    assert mint_map_point_id(1, 0) == mint_map_point_id(1, 0)
    assert mint_map_point_id(1, 0) != mint_map_point_id(2, 0)
    assert mint_map_point_id(1, 0) != mint_map_point_id(1, 1)


def test_mint_format():
    mp = mint_map_point_id(3, 12345)
    assert len(mp) == 16
    assert mp == mp.lower()
    int(mp, 16)  # parses as hex


def test_no_collisions_across_nodes():
    seen = set()
    for origin in (1, 2, 3):
        for counter in range(2000):
            seen.add(mint_map_point_id(origin, counter))
    assert len(seen) == 6000


@given(st.integers(0, 2**64 - 1))
def test_serialized_id_roundtrips(value):
    mp = map_point_id_from_int(value)
    assert map_point_id_to_int(mp) == value


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
def test_splitmix_injective_on_samples(a, b):
    if a != b:
        assert splitmix64(a) != splitmix64(b)


def test_keyframe_id_total_order():
    ids = [KeyFrameId(2, 0), KeyFrameId(1, 5), KeyFrameId(1, 2), KeyFrameId(2, 1)]
    assert sorted(ids) == [KeyFrameId(1, 2), KeyFrameId(1, 5),
                           KeyFrameId(2, 0), KeyFrameId(2, 1)]


def test_allocator_monotonic():
    alloc = IdAllocator(1)
    a, b = alloc.next_keyframe_id(), alloc.next_keyframe_id()
    assert a < b and a.origin == b.origin == 1
    m1, m2 = alloc.next_map_id(), alloc.next_map_id()
    assert m1 < m2
    assert alloc.next_map_point_id() != alloc.next_map_point_id()
