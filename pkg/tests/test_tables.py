import itertools

import pytest
from hypothesis import given, settings, strategies as st

from gpufabric.errors import (
    EntryNotUsed,
    NoFreeBus,
    NotBound,
    OverlappingWindow,
    SlotBusy,
    SlotInvalid,
    TableError,
)
from gpufabric.tables import (
    BoxTable,
    HostTable,
    Target,
    box_bind,
    box_free,
    check_consistency,
    host_bind,
    host_free,
    host_set_window,
    lookup_by_address,
    lookup_by_id,
)


def test_bind_on_empty_table():
    t = HostTable(4)
    eid = host_bind(t, 2, 5, 0)
    assert eid == 0
    e = t.entries[0]
    assert e.used and (e.gpu_box_id, e.slot_id, e.path_id) == (2, 5, 0)
    assert e.mem_base is None and e.mem_limit is None


@pytest.mark.parametrize("pattern", list(itertools.product([False, True], repeat=4)))
def test_bind_first_fit_every_fill_pattern(pattern):
    t = HostTable(4)
    for i, used in enumerate(pattern):
        if used:
            t.entries[i].used = True
            t.entries[i].gpu_box_id, t.entries[i].slot_id, t.entries[i].path_id = 9, i, 0
    free = [i for i, used in enumerate(pattern) if not used]
    if not free:
        with pytest.raises(NoFreeBus):
            t.bind(1, 1, 0)
        return
    assert t.bind(1, 1, 0) == free[0]


def test_bind_uses_reserved_bus():
    t = HostTable(4, first_bus=3)
    t.bind(0, 0, 0)
    t.bind(0, 1, 0)
    assert [e.bus_id for e in t.entries] == [3, 4, 5, 6]
    assert lookup_by_id(t, 4, 0) == Target(0, 1, 0)


def test_table_rejects_bus_overflow():
    with pytest.raises(ValueError):
        HostTable(16, first_bus=250)


def test_window_lookup_inclusive():
    t = HostTable(4)
    e0 = t.bind(2, 5, 0)
    host_set_window(t, e0, 0x1000_0000, 0x1FFF_FFFF)
    assert lookup_by_address(t, 0x1234_5678) == Target(2, 5, 0)
    assert lookup_by_address(t, 0x1FFF_FFFF) == Target(2, 5, 0)
    assert lookup_by_address(t, 0x1000_0000) == Target(2, 5, 0)
    assert lookup_by_address(t, 0x0FFF_FFFF) is None
    assert lookup_by_address(t, 0x2000_0000) is None


def test_two_windows_second_hit():
    t = HostTable(4)
    a, b = t.bind(2, 0, 0), t.bind(3, 1, 1)
    t.set_window(a, 0x0, 0xFFFF)
    t.set_window(b, 0x10000, 0x1FFFF)
    assert t.lookup_by_address(0x18000) == Target(3, 1, 1)


def test_overlapping_window_rejected():
    t = HostTable(4)
    a, b = t.bind(2, 0, 0), t.bind(2, 1, 0)
    t.set_window(a, 0x1000, 0x1FFF)
    with pytest.raises(OverlappingWindow):
        t.set_window(b, 0x1FFF, 0x2FFF)
    with pytest.raises(OverlappingWindow):
        t.set_window(b, 0x0, 0x1000)
    t.set_window(b, 0x2000, 0x2FFF)  # adjacent is fine


def test_window_on_free_entry():
    t = HostTable(4)
    with pytest.raises(EntryNotUsed):
        t.set_window(0, 0, 10)


def test_inverted_window():
    t = HostTable(4)
    t.bind(0, 0, 0)
    with pytest.raises(TableError):
        t.set_window(0, 10, 5)


def test_rewriting_own_window_is_not_overlap():
    t = HostTable(2)
    t.bind(0, 0, 0)
    t.set_window(0, 0x1000, 0x1FFF)
    t.set_window(0, 0x1800, 0x27FF)
    assert t.lookup_by_address(0x1000) is None
    assert t.lookup_by_address(0x2000) == Target(0, 0, 0)


def test_lookup_by_id_unknown_and_after_free():
    t = HostTable(4)
    eid = t.bind(4, 2, 0)
    bus = t.entries[eid].bus_id
    assert t.lookup_by_id(bus, 0) == Target(4, 2, 0)
    assert t.lookup_by_id(bus, 1) is None
    assert t.lookup_by_id(99, 0) is None
    host_free(t, eid)
    assert t.lookup_by_id(bus, 0) is None


def test_free_clears_fields():
    t = HostTable(2)
    t.bind(1, 2, 3)
    t.set_window(0, 0, 100)
    t.free(0)
    e = t.entries[0]
    assert not e.used
    assert (e.gpu_box_id, e.slot_id, e.path_id, e.mem_base, e.mem_limit) == (None,) * 5
    with pytest.raises(NotBound):
        t.free(0)


def test_no_stale_window_after_rebind():
    t = HostTable(2)
    eid = t.bind(1, 0, 0)
    t.set_window(eid, 0x4000, 0x4FFF)
    t.free(eid)
    again = t.bind(1, 1, 0)
    assert again == eid
    assert t.lookup_by_address(0x4800) is None
    t.set_window(again, 0x8000, 0x8FFF)
    assert t.lookup_by_address(0x4800) is None
    assert t.lookup_by_address(0x8000) == Target(1, 1, 0)


def _scan(entries, address):
    hits = [e for e in entries if e.used and e.mem_base is not None and e.mem_base <= address <= e.mem_limit]
    assert len(hits) <= 1
    return (hits[0].gpu_box_id, hits[0].slot_id, hits[0].path_id) if hits else None


@st.composite
def windowed_table(draw):
    n = draw(st.integers(1, 8))
    t = HostTable(n)
    cuts = sorted(draw(st.sets(st.integers(0, 1 << 20), min_size=2 * n, max_size=2 * n)))
    for i in range(n):
        if draw(st.booleans()):
            eid = t.bind(draw(st.integers(0, 5)), i, draw(st.integers(0, 3)))
            if draw(st.booleans()):
                t.set_window(eid, cuts[2 * i], cuts[2 * i + 1])
    return t


@settings(max_examples=200)
@given(windowed_table(), st.lists(st.integers(0, (1 << 20) + 10), max_size=50))
def test_lookup_matches_linear_scan(t, addrs):
    probes = list(addrs)
    for e in t.entries:
        if e.used and e.mem_base is not None:
            probes += [e.mem_base - 1, e.mem_base, e.mem_limit, e.mem_limit + 1]
    for a in probes:
        got = t.lookup_by_address(a)
        assert (tuple(got) if got else None) == _scan(t.entries, a)


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 7)), max_size=100))
def test_host_table_state_machine(ops):
    t = HostTable(4)
    model = {}  # entry -> slot
    next_slot = 0
    for bind, pick in ops:
        if bind:
            if len(model) == 4:
                with pytest.raises(NoFreeBus):
                    t.bind(0, next_slot, 0)
                continue
            eid = t.bind(0, next_slot, 0)
            assert eid == min(set(range(4)) - set(model))
            model[eid] = next_slot
            next_slot += 1
        elif model:
            eid = sorted(model)[pick % len(model)]
            bus = t.entries[eid].bus_id
            t.free(eid)
            del model[eid]
            assert t.lookup_by_id(bus, 0) is None
        for eid, slot in model.items():
            assert t.lookup_by_id(t.entries[eid].bus_id, 0) == Target(0, slot, 0)


# --- box table ---------------------------------------------------------------


def test_box_bind_and_errors():
    b = BoxTable([True] * 5 + [True, False, True])
    box_bind(b, 5, 1, 0)
    assert b.slot(5).used and b.slot(5).host_node_id == 1
    with pytest.raises(SlotBusy):
        b.bind(5, 2, 0)
    with pytest.raises(SlotInvalid):
        b.bind(6, 1, 0)
    with pytest.raises(SlotInvalid):
        b.bind(8, 1, 0)
    box_free(b, 5)
    assert not b.slot(5).used and b.slot(5).host_node_id is None
    with pytest.raises(NotBound):
        b.free(5)


def test_box_free_slots():
    b = BoxTable([True, False, True, True])
    b.bind(2, 0, 0)
    assert b.free_slots() == [0, 3]


# --- snapshot text -------------------------------------------------------------


def test_host_snapshot_golden():
    t = HostTable(3)
    t.bind(34, 5, 1)
    t.set_window(0, 0x1000_0000, 0x1FFF_FFFF)
    t.bind(35, 0, 0)
    assert t.to_text() == (
        "0,1,1,0,0x10000000,0x1fffffff,34,5,1\n"
        "1,1,2,0,,,35,0,0\n"
        "2,0,3,0,,,,,\n"
    )


def test_box_snapshot_golden():
    b = BoxTable([True, False, True])
    b.bind(2, 7, 0)
    assert b.to_text() == "0,1,0,0,,\n1,0,0,1,,\n2,1,1,2,7,0\n"


def test_snapshot_round_trip():
    t = HostTable(4)
    t.bind(40, 1, 0)
    t.bind(41, 2, 3)
    t.set_window(1, 0xFFFF_0000_0000_0000, 0xFFFF_FFFF_FFFF_FFFF)
    assert HostTable.from_text(t.to_text()) == t
    b = BoxTable([True, True, False])
    b.bind(1, 3, 2)
    assert BoxTable.from_text("# box 40\n" + b.to_text()) == b


@pytest.mark.parametrize("text", [
    "0,1,1\n",
    "0,2,1,0,,,,,\n",
    "0,1,x,0,,,,,\n",
    ",1,1,0,,,,,\n",
])
def test_snapshot_parse_errors(text):
    with pytest.raises(TableError, match="line 1"):
        HostTable.from_text(text)


# --- consistency ----------------------------------------------------------------


def _pair():
    host = HostTable(2)
    box = BoxTable([True, True])
    host.bind(10, 1, 0)
    box.bind(1, 0, 0)
    return {0: host}, {10: box}


def test_consistency_clean():
    hosts, boxes = _pair()
    assert check_consistency(hosts, boxes) == []


def test_consistency_one_sided_host():
    hosts, boxes = _pair()
    boxes[10].free(1)
    assert check_consistency(hosts, boxes)


def test_consistency_one_sided_box():
    hosts, boxes = _pair()
    boxes[10].bind(0, 0, 0)
    assert any("referenced by 0" in p for p in check_consistency(hosts, boxes))


def test_consistency_double_reference():
    hosts, boxes = _pair()
    hosts[0].bind(10, 1, 0)
    assert any("referenced by 2" in p for p in check_consistency(hosts, boxes))


def test_consistency_used_but_invalid():
    hosts, boxes = _pair()
    boxes[10].entries[1].valid = False
    assert any("not valid" in p for p in check_consistency(hosts, boxes))


def test_consistency_overlap_detected():
    hosts, boxes = _pair()
    boxes[10].bind(0, 0, 0)
    hosts[0].bind(10, 0, 0)
    hosts[0].set_window(0, 0, 100)
    hosts[0].entries[1].mem_base, hosts[0].entries[1].mem_limit = 50, 150
    assert any("overlapping" in p for p in check_consistency(hosts, boxes))
