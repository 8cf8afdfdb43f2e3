"""Proxy mapping tables: host-side bus entries and box-side slot entries.

Memory windows are inclusive on both ends, like bridge base/limit registers.
Free entries are picked lowest ``entry_id`` first.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Mapping, NamedTuple, Optional

from .errors import (
    EntryNotUsed,
    NoFreeBus,
    NotBound,
    OverlappingWindow,
    SlotBusy,
    SlotInvalid,
    TableError,
)

DEFAULT_HOST_ENTRIES = 16


class Target(NamedTuple):
    gpu_box_id: int
    slot_id: int
    path_id: int


@dataclass
class HostMapEntry:
    entry_id: int
    used: bool = False
    bus_id: int = 0
    device_id: int = 0
    mem_base: Optional[int] = None
    mem_limit: Optional[int] = None
    gpu_box_id: Optional[int] = None
    slot_id: Optional[int] = None
    path_id: Optional[int] = None

    @property
    def has_window(self) -> bool:
        return self.mem_base is not None

    def contains(self, address: int) -> bool:
        return self.used and self.has_window and self.mem_base <= address <= self.mem_limit

    def target(self) -> Target:
        return Target(self.gpu_box_id, self.slot_id, self.path_id)


@dataclass
class BoxMapEntry:
    entry_id: int
    valid: bool = True
    used: bool = False
    slot_id: int = 0
    host_node_id: Optional[int] = None
    path_id: Optional[int] = None


class HostTable:
    """Mapping table held by the proxy on the host server side.

    Bus numbers are reserved up front, one per entry, starting at
    ``first_bus``; each entry exposes a single device (device 0).
    """

    def __init__(self, capacity: int = DEFAULT_HOST_ENTRIES, first_bus: int = 1):
        if capacity <= 0:
            raise ValueError("host table needs at least one entry")
        if first_bus + capacity - 1 > 0xFF:
            raise ValueError("reserved bus range exceeds 8-bit bus numbers")
        self.entries = [HostMapEntry(i, bus_id=first_bus + i) for i in range(capacity)]

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, HostTable) and self.entries == other.entries

    def _entry(self, entry_id: int) -> HostMapEntry:
        if not 0 <= entry_id < len(self.entries):
            raise TableError(f"no entry {entry_id}")
        return self.entries[entry_id]

    def used_entries(self) -> list[HostMapEntry]:
        return [e for e in self.entries if e.used]

    def free_count(self) -> int:
        return sum(not e.used for e in self.entries)

    def bind(self, gpu_box_id: int, slot_id: int, path_id: int) -> int:
        for e in self.entries:
            if not e.used:
                e.used = True
                e.gpu_box_id, e.slot_id, e.path_id = gpu_box_id, slot_id, path_id
                e.mem_base = e.mem_limit = None
                return e.entry_id
        raise NoFreeBus("every bus entry in the host table is in use")

    def set_window(self, entry_id: int, mem_base: int, mem_limit: int) -> None:
        e = self._entry(entry_id)
        if not e.used:
            raise EntryNotUsed(f"entry {entry_id} is not in use")
        if not 0 <= mem_base <= mem_limit < 1 << 64:
            raise TableError(f"bad window [{mem_base:#x}, {mem_limit:#x}]")
        for other in self.entries:
            if other is e or not other.used or not other.has_window:
                continue
            if mem_base <= other.mem_limit and other.mem_base <= mem_limit:
                raise OverlappingWindow(
                    f"[{mem_base:#x}, {mem_limit:#x}] overlaps entry {other.entry_id}"
                )
        e.mem_base, e.mem_limit = mem_base, mem_limit

    def free(self, entry_id: int) -> None:
        e = self._entry(entry_id)
        if not e.used:
            raise NotBound(f"entry {entry_id} is not bound")
        e.used = False
        e.mem_base = e.mem_limit = None
        e.gpu_box_id = e.slot_id = e.path_id = None

    def entry_for_address(self, address: int) -> Optional[HostMapEntry]:
        for e in self.entries:
            if e.contains(address):
                return e
        return None

    def entry_for_id(self, bus_id: int, device_id: int) -> Optional[HostMapEntry]:
        for e in self.entries:
            if e.used and e.bus_id == bus_id and e.device_id == device_id:
                return e
        return None

    def lookup_by_address(self, address: int) -> Optional[Target]:
        e = self.entry_for_address(address)
        return e.target() if e else None

    def lookup_by_id(self, bus_id: int, device_id: int) -> Optional[Target]:
        e = self.entry_for_id(bus_id, device_id)
        return e.target() if e else None

    def to_text(self) -> str:
        return dump_entries(self.entries)

    @classmethod
    def from_text(cls, text: str) -> "HostTable":
        entries = load_entries(text, HostMapEntry)
        t = cls.__new__(cls)
        t.entries = entries
        return t


class BoxTable:
    """Mapping table held by the proxy inside a GPU box, one entry per slot."""

    def __init__(self, valid: Iterable[bool]):
        self.entries = [BoxMapEntry(i, valid=bool(v), slot_id=i) for i, v in enumerate(valid)]

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, BoxTable) and self.entries == other.entries

    def slot(self, slot_id: int) -> BoxMapEntry:
        for e in self.entries:
            if e.slot_id == slot_id:
                return e
        raise SlotInvalid(f"no slot {slot_id} in this box")

    def free_slots(self) -> list[int]:
        return [e.slot_id for e in self.entries if e.valid and not e.used]

    def bind(self, slot_id: int, host_node_id: int, path_id: int) -> None:
        e = self.slot(slot_id)
        if not e.valid:
            raise SlotInvalid(f"slot {slot_id} holds no GPU")
        if e.used:
            raise SlotBusy(f"slot {slot_id} is bound to host {e.host_node_id}")
        e.used = True
        e.host_node_id, e.path_id = host_node_id, path_id

    def free(self, slot_id: int) -> None:
        e = self.slot(slot_id)
        if not e.used:
            raise NotBound(f"slot {slot_id} is not bound")
        e.used = False
        e.host_node_id = e.path_id = None

    def to_text(self) -> str:
        return dump_entries(self.entries)

    @classmethod
    def from_text(cls, text: str) -> "BoxTable":
        t = cls.__new__(cls)
        t.entries = load_entries(text, BoxMapEntry)
        return t


# module-level aliases matching the operation names used elsewhere
def host_bind(table: HostTable, gpu_box_id: int, slot_id: int, path_id: int) -> int:
    return table.bind(gpu_box_id, slot_id, path_id)


def host_set_window(table: HostTable, entry_id: int, mem_base: int, mem_limit: int) -> None:
    table.set_window(entry_id, mem_base, mem_limit)


def host_free(table: HostTable, entry_id: int) -> None:
    table.free(entry_id)


def lookup_by_address(table: HostTable, address: int) -> Optional[Target]:
    return table.lookup_by_address(address)


def lookup_by_id(table: HostTable, bus_id: int, device_id: int) -> Optional[Target]:
    return table.lookup_by_id(bus_id, device_id)


def box_bind(table: BoxTable, slot_id: int, host_node_id: int, path_id: int) -> None:
    table.bind(slot_id, host_node_id, path_id)


def box_free(table: BoxTable, slot_id: int) -> None:
    table.free(slot_id)


# --- snapshot text format ---------------------------------------------------
# One entry per line, fields comma separated in declaration order.  Booleans
# are 0/1, addresses hex, unset fields empty.  Lines starting with '#' are
# ignored on load.

_ADDRESS_FIELDS = {"mem_base", "mem_limit"}
_REQUIRED = {
    HostMapEntry: ("entry_id", "used", "bus_id", "device_id"),
    BoxMapEntry: ("entry_id", "valid", "used", "slot_id"),
}


def _fmt(name: str, value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if name in _ADDRESS_FIELDS:
        return f"{value:#x}"
    return str(value)


def dump_entries(entries) -> str:
    if not entries:
        return ""
    names = [f.name for f in fields(entries[0])]
    lines = [",".join(_fmt(n, getattr(e, n)) for n in names) for e in entries]
    return "\n".join(lines) + "\n"


def load_entries(text: str, cls) -> list:
    flds = fields(cls)
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != len(flds):
            raise TableError(f"line {lineno}: expected {len(flds)} fields, got {len(parts)}")
        kwargs = {}
        for f, p in zip(flds, parts):
            p = p.strip()
            try:
                if p == "":
                    kwargs[f.name] = None
                elif f.name in ("used", "valid"):
                    if p not in ("0", "1"):
                        raise ValueError(p)
                    kwargs[f.name] = p == "1"
                else:
                    kwargs[f.name] = int(p, 0)
            except ValueError:
                raise TableError(f"line {lineno}: bad value {p!r} for {f.name}") from None
        for required in _REQUIRED[cls]:
            if kwargs[required] is None:
                raise TableError(f"line {lineno}: {required} must be set")
        out.append(cls(**kwargs))
    return out


def check_consistency(
    host_tables: Mapping[int, HostTable], box_tables: Mapping[int, BoxTable]
) -> list[str]:
    """Return every violation of the host<->box binding invariants.

    An empty list means: each used host entry points at a used box slot
    that names the same host and path, each used box slot is referenced by
    exactly one host entry, windows never overlap within a host and
    (bus, device) pairs are unique.
    """
    problems = []
    refs: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for host_id, table in host_tables.items():
        seen_ids = set()
        windows = []
        for e in table.entries:
            if not e.used:
                if e.gpu_box_id is not None or e.has_window:
                    problems.append(f"host {host_id} entry {e.entry_id}: free but not cleared")
                continue
            if (e.bus_id, e.device_id) in seen_ids:
                problems.append(f"host {host_id}: duplicate bus/device {e.bus_id}/{e.device_id}")
            seen_ids.add((e.bus_id, e.device_id))
            if e.has_window:
                if e.mem_base > e.mem_limit:
                    problems.append(f"host {host_id} entry {e.entry_id}: inverted window")
                windows.append((e.mem_base, e.mem_limit))
            refs.setdefault((e.gpu_box_id, e.slot_id), []).append((host_id, e.entry_id))
            box = box_tables.get(e.gpu_box_id)
            if box is None:
                problems.append(f"host {host_id} entry {e.entry_id}: unknown box {e.gpu_box_id}")
                continue
            try:
                slot = box.slot(e.slot_id)
            except SlotInvalid:
                problems.append(f"host {host_id} entry {e.entry_id}: unknown slot {e.slot_id}")
                continue
            if not (slot.used and slot.host_node_id == host_id and slot.path_id == e.path_id):
                problems.append(
                    f"host {host_id} entry {e.entry_id}: box {e.gpu_box_id} slot {e.slot_id} disagrees"
                )
        windows.sort()
        for (_, hi), (lo, _) in zip(windows, windows[1:]):
            if lo <= hi:
                problems.append(f"host {host_id}: overlapping windows")
    for box_id, box in box_tables.items():
        slot_ids = [e.slot_id for e in box.entries]
        if len(set(slot_ids)) != len(slot_ids):
            problems.append(f"box {box_id}: duplicate slot ids")
        for e in box.entries:
            if e.used and not e.valid:
                problems.append(f"box {box_id} slot {e.slot_id}: used but not valid")
            if not e.used:
                if e.host_node_id is not None:
                    problems.append(f"box {box_id} slot {e.slot_id}: free but names a host")
                continue
            owners = refs.get((box_id, e.slot_id), [])
            if len(owners) != 1:
                problems.append(f"box {box_id} slot {e.slot_id}: referenced by {len(owners)} host entries")
            elif owners[0][0] != e.host_node_id:
                problems.append(f"box {box_id} slot {e.slot_id}: owner mismatch")
    return problems
