import itertools

import pytest
from hypothesis import given, strategies as st

from gpufabric.errors import MalformedTlp, UnknownTag
from gpufabric.tlp import (
    LinkParams,
    MessageRouting,
    RoutingClass,
    TagPool,
    Tlp,
    TlpKind,
    acquire_tag,
    check_size,
    classify,
    release_tag,
    routing_kind,
)


def test_acquire_on_empty_pool_gives_tag_zero():
    pool = TagPool(5)
    assert acquire_tag(pool) == 0
    assert pool.in_flight == {0}


def test_full_pool_blocks_without_mutation():
    pool = TagPool(5)
    for _ in range(5):
        pool.acquire()
    before = set(pool.in_flight)
    assert acquire_tag(pool) is None
    assert pool.in_flight == before


def test_140_tags_then_blocked():
    pool = TagPool(140)
    tags = [pool.acquire() for _ in range(140)]
    assert None not in tags and len(set(tags)) == 140
    assert pool.acquire() is None


def test_release_then_pool_is_empty():
    pool = TagPool(5)
    t = pool.acquire()
    release_tag(pool, t)
    assert len(pool) == 0


def test_release_unknown_tag():
    with pytest.raises(UnknownTag):
        TagPool(5).release(7)


def test_release_frees_slot_for_reuse():
    pool = TagPool(5)
    for _ in range(5):
        pool.acquire()
    pool.release(2)
    assert pool.acquire() == 2  # lowest free


def _reachable_states(capacity):
    """Breadth-first enumeration of every in-flight set reachable by the pool,
    checked against a plain set model with lowest-free-first allocation."""
    seen = {frozenset()}
    frontier = [frozenset()]
    while frontier:
        nxt = []
        for state in frontier:
            # acquire
            pool = TagPool(capacity)
            for t in sorted(state):
                pool.in_flight.add(t)
            pool._free = [t for t in range(capacity) if t not in state]
            got = pool.acquire()
            if len(state) == capacity:
                assert got is None and pool.in_flight == set(state)
            else:
                expect = min(set(range(capacity)) - state)
                assert got == expect
                assert got not in state
                succ = frozenset(state | {got})
                assert len(succ) <= capacity
                if succ not in seen:
                    seen.add(succ)
                    nxt.append(succ)
            # every release
            for t in state:
                pool = TagPool(capacity)
                pool.in_flight = set(state)
                pool._free = [x for x in range(capacity) if x not in state]
                pool.release(t)
                succ = frozenset(state - {t})
                assert pool.in_flight == succ
                if succ not in seen:
                    seen.add(succ)
                    nxt.append(succ)
        frontier = nxt
    return seen


@pytest.mark.parametrize("capacity", [1, 2, 3, 4, 5])
def test_every_reachable_state_respects_capacity(capacity):
    states = _reachable_states(capacity)
    # with release-any, every subset of the tag space is reachable
    assert len(states) == 2 ** capacity
    assert all(len(s) <= capacity for s in states)


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 7)), max_size=200))
def test_random_interleavings(ops):
    pool = TagPool(5)
    model = set()
    blocked = False
    for is_acquire, pick in ops:
        if is_acquire:
            t = pool.acquire()
            # after a Blocked, success requires an intervening release
            assert (t is None) == (len(model) == 5)
            if blocked:
                assert t is None
            if t is None:
                blocked = True
            else:
                assert t not in model
                model.add(t)
        elif model:
            victim = sorted(model)[pick % len(model)]
            pool.release(victim)
            model.remove(victim)
            blocked = False
        assert pool.in_flight == model
        assert len(pool.in_flight) <= 5


def test_acquire_after_blocked_needs_release():
    pool = TagPool(2)
    pool.acquire(), pool.acquire()
    assert pool.acquire() is None
    assert pool.acquire() is None
    pool.release(1)
    assert pool.acquire() == 1


# --- Tlp construction and classification ---------------------------------


def test_classify_examples():
    assert classify(Tlp(TlpKind.MEM_READ, address=0x1000, tag=0, read_len=128)) is RoutingClass.ADDRESS
    cw = Tlp(TlpKind.CONFIG_WRITE, bus_id=3, device_id=0, register=0x10, tag=1, payload=b"\0" * 4)
    assert classify(cw) is RoutingClass.ID
    msg = Tlp(TlpKind.MESSAGE, message_routing=MessageRouting.LOCAL)
    assert classify(msg) is RoutingClass.LOCAL
    assert routing_kind(msg) is RoutingClass.IMPLICIT


@pytest.mark.parametrize("tlp,expected", [
    (Tlp(TlpKind.MEM_WRITE, address=0, payload=b"x"), RoutingClass.ADDRESS),
    (Tlp(TlpKind.IO_READ, address=0x60, tag=3, read_len=4), RoutingClass.ADDRESS),
    (Tlp(TlpKind.IO_WRITE, address=0x60, tag=3, payload=b"abcd"), RoutingClass.ADDRESS),
    (Tlp(TlpKind.CONFIG_READ, bus_id=1, device_id=0, register=0, tag=0, read_len=4), RoutingClass.ID),
    (Tlp(TlpKind.COMPLETION, bus_id=0, device_id=0, tag=9, payload=b"d" * 64), RoutingClass.ID),
    (Tlp(TlpKind.MESSAGE, message_routing=MessageRouting.ADDRESS, address=5), RoutingClass.ADDRESS),
    (Tlp(TlpKind.MESSAGE, message_routing=MessageRouting.ID, bus_id=2, device_id=1), RoutingClass.ID),
])
def test_classify_all_kinds(tlp, expected):
    assert classify(tlp) is expected
    assert classify(tlp) is classify(tlp)


@pytest.mark.parametrize("kwargs", [
    dict(kind=TlpKind.MEM_READ, address=0, read_len=4),  # no tag
    dict(kind=TlpKind.MEM_WRITE, address=0, tag=1, payload=b"x"),  # posted with tag
    dict(kind=TlpKind.MEM_READ, address=0, tag=0, read_len=4, payload=b"x"),
    dict(kind=TlpKind.MEM_READ, address=0, tag=0),  # read_len 0
    dict(kind=TlpKind.CONFIG_WRITE, address=0, tag=0, payload=b"x"),
    dict(kind=TlpKind.CONFIG_READ, bus_id=1, device_id=0, tag=0, read_len=4),  # no register
    dict(kind=TlpKind.MESSAGE),
    dict(kind=TlpKind.MESSAGE, message_routing=MessageRouting.LOCAL, address=4),
    dict(kind=TlpKind.COMPLETION, tag=1),
    dict(kind=TlpKind.MEM_WRITE, address=1 << 64, payload=b"x"),
    dict(kind=TlpKind.COMPLETION, bus_id=1, device_id=40, tag=1),
    dict(kind=TlpKind.MEM_WRITE, address=0, message_routing=MessageRouting.ID),
])
def test_malformed_rejected_at_construction(kwargs):
    with pytest.raises(MalformedTlp):
        Tlp(**kwargs)


def test_check_size_against_mrs():
    check_size(Tlp(TlpKind.MEM_READ, address=0, tag=0, read_len=128), 128)
    with pytest.raises(MalformedTlp):
        check_size(Tlp(TlpKind.MEM_READ, address=0, tag=0, read_len=256), 128)
    with pytest.raises(MalformedTlp):
        check_size(Tlp(TlpKind.MEM_WRITE, address=0, payload=bytes(129)), 128)


def test_link_params():
    assert LinkParams().rate == pytest.approx(12.5e9)
    with pytest.raises(ValueError):
        LinkParams(lanes=3)
    with pytest.raises(ValueError):
        LinkParams(mrs=0)


def test_non_posted_flags():
    kinds = {k: k in (TlpKind.MEM_READ, TlpKind.IO_READ, TlpKind.IO_WRITE,
                      TlpKind.CONFIG_READ, TlpKind.CONFIG_WRITE) for k in TlpKind}
    samples = {
        TlpKind.MEM_READ: Tlp(TlpKind.MEM_READ, address=0, tag=0, read_len=1),
        TlpKind.MEM_WRITE: Tlp(TlpKind.MEM_WRITE, address=0),
        TlpKind.MESSAGE: Tlp(TlpKind.MESSAGE, message_routing=MessageRouting.LOCAL),
    }
    for k, t in samples.items():
        assert t.is_non_posted == kinds[k]


def test_tags_unique_under_all_orders():
    # exhaustive over all release orders of a full 4-tag pool
    for order in itertools.permutations(range(4)):
        pool = TagPool(4)
        for _ in range(4):
            pool.acquire()
        for t in order:
            pool.release(t)
            lowest_free = min(set(range(4)) - pool.in_flight)
            again = pool.acquire()
            assert again == lowest_free
            assert len(pool.in_flight) == len(set(pool.in_flight))
            pool.release(again)
        assert len(pool) == 0
