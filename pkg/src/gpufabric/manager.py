"""Fabric-wide GPU pool manager.

Owns one host table per host proxy and one box table per GPU box, and keeps
them in agreement while granting and reclaiming GPUs.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Iterable

from .errors import FabricError, Insufficient, NoFreeBus, NotBound
from .tables import DEFAULT_HOST_ENTRIES, BoxTable, HostTable, check_consistency


class Placement(enum.Enum):
    ANYWHERE = "anywhere"
    SAME_BOX = "samebox"
    SAME_BOX_REQUIRED = "samebox-required"


@dataclass
class Topology:
    """Static fabric layout.

    ``boxes`` maps a box node ID to one valid flag per slot.  Node IDs are
    shared between hosts and boxes and must not collide.  ``paths`` overrides
    the path ID for a (host, box) pair; anything missing uses path 0.
    """

    hosts: list[int]
    boxes: dict[int, list[bool]]
    paths: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.hosts)) != len(self.hosts):
            raise ValueError("duplicate host node IDs")
        clash = set(self.hosts) & set(self.boxes)
        if clash:
            raise ValueError(f"node IDs used by both hosts and boxes: {sorted(clash)}")

    @classmethod
    def uniform(cls, n_hosts: int, n_boxes: int, slots_per_box: int,
                invalid: Iterable[tuple[int, int]] = ()) -> "Topology":
        """Hosts get node IDs 0..n_hosts-1, boxes follow on from there.

        ``invalid`` lists (box index, slot) pairs with no GPU installed.
        """
        hosts = list(range(n_hosts))
        boxes = {n_hosts + b: [True] * slots_per_box for b in range(n_boxes)}
        for b, s in invalid:
            boxes[n_hosts + b][s] = False
        return cls(hosts, boxes)

    def path(self, host: int, box: int) -> int:
        return self.paths.get((host, box), 0)

    @property
    def total_valid(self) -> int:
        return sum(sum(v) for v in self.boxes.values())


@dataclass(frozen=True)
class AllocationRequest:
    host: int
    count: int = 1
    placement: Placement = Placement.ANYWHERE


@dataclass(frozen=True)
class Grant:
    box: int
    slot: int
    path: int
    host_entry_id: int


@dataclass(frozen=True)
class HotPlugEvent:
    added: bool
    host: int
    box: int
    slot: int
    path: int

    def __str__(self):
        verb = "ADD" if self.added else "REMOVE"
        return f"{verb} host={self.host} box={self.box} slot={self.slot} path={self.path}"


@dataclass(frozen=True)
class PoolState:
    free: int
    used: int
    per_box: dict[int, tuple[int, int]]  # box -> (free, used)
    per_host: dict[int, int]  # host -> GPUs bound


class PoolManager:
    """Serialized allocator over the whole fabric.

    Every mutating call holds one lock, so concurrent callers observe a
    total order and snapshots always fall between commands.  ``reserve``
    GPUs are held back as spares and never granted.
    """

    def __init__(self, topology: Topology, host_entries: int = DEFAULT_HOST_ENTRIES, reserve: int = 0):
        if reserve < 0:
            raise ValueError("reserve must be >= 0")
        self.topology = topology
        self.reserve = reserve
        self.host_tables: dict[int, HostTable] = {h: HostTable(host_entries) for h in topology.hosts}
        self.box_tables: dict[int, BoxTable] = {b: BoxTable(v) for b, v in topology.boxes.items()}
        self.events: list[HotPlugEvent] = []
        self._lock = threading.Lock()

    # -- queries ----------------------------------------------------------

    def _free_slots(self) -> list[tuple[int, int]]:
        return [(b, s) for b in sorted(self.box_tables) for s in self.box_tables[b].free_slots()]

    def snapshot(self) -> PoolState:
        with self._lock:
            per_box = {}
            for b in sorted(self.box_tables):
                entries = self.box_tables[b].entries
                used = sum(e.used for e in entries)
                free = sum(e.valid and not e.used for e in entries)
                per_box[b] = (free, used)
            per_host = {h: len(self.host_tables[h].used_entries()) for h in sorted(self.host_tables)}
            return PoolState(
                free=sum(f for f, _ in per_box.values()),
                used=sum(u for _, u in per_box.values()),
                per_box=per_box,
                per_host=per_host,
            )

    def dump(self) -> str:
        """Full text image of every table, for bit-exact state comparison."""
        with self._lock:
            parts = []
            for h in sorted(self.host_tables):
                parts.append(f"# host {h}\n" + self.host_tables[h].to_text())
            for b in sorted(self.box_tables):
                parts.append(f"# box {b}\n" + self.box_tables[b].to_text())
            return "".join(parts)

    def violations(self) -> list[str]:
        with self._lock:
            return check_consistency(self.host_tables, self.box_tables)

    def event_log(self) -> list[str]:
        return [str(e) for e in self.events]

    # -- commands ---------------------------------------------------------

    def _host_table(self, host: int) -> HostTable:
        try:
            return self.host_tables[host]
        except KeyError:
            raise NotBound(f"unknown host {host}") from None

    def _choose(self, req: AllocationRequest) -> list[tuple[int, int]]:
        free = self._free_slots()
        if req.count > len(free) - self.reserve:
            raise Insufficient(
                f"host {req.host} asked for {req.count} GPUs, "
                f"{max(len(free) - self.reserve, 0)} grantable"
            )
        if req.placement is not Placement.ANYWHERE:
            for b in sorted(self.box_tables):
                slots = self.box_tables[b].free_slots()
                if len(slots) >= req.count:
                    return [(b, s) for s in slots[: req.count]]
            if req.placement is Placement.SAME_BOX_REQUIRED:
                raise Insufficient(f"no single box has {req.count} free GPUs")
        return free[: req.count]

    def provision(self, req: AllocationRequest) -> list[Grant]:
        """Grant ``req.count`` GPUs to ``req.host``, all or nothing."""
        if req.count < 1:
            raise ValueError("count must be >= 1")
        with self._lock:
            host_table = self._host_table(req.host)
            picks = self._choose(req)
            if host_table.free_count() < len(picks):
                raise NoFreeBus(f"host {req.host} has {host_table.free_count()} free bus entries")
            grants: list[Grant] = []
            try:
                for box, slot in picks:
                    path = self.topology.path(req.host, box)
                    self.box_tables[box].bind(slot, req.host, path)
                    try:
                        entry = host_table.bind(box, slot, path)
                    except FabricError:
                        self.box_tables[box].free(slot)
                        raise
                    grants.append(Grant(box, slot, path, entry))
            except FabricError:
                for g in grants:
                    host_table.free(g.host_entry_id)
                    self.box_tables[g.box].free(g.slot)
                raise
            self.events.extend(HotPlugEvent(True, req.host, g.box, g.slot, g.path) for g in grants)
            return grants

    def reclaim(self, host: int, entry_ids: Iterable[int]) -> None:
        """Release the listed host entries; nothing changes if any is not bound to ``host``."""
        entry_ids = list(entry_ids)
        with self._lock:
            table = self._host_table(host)
            if len(set(entry_ids)) != len(entry_ids):
                raise NotBound("entry listed twice")
            entries = []
            for eid in entry_ids:
                if not 0 <= eid < len(table.entries) or not table.entries[eid].used:
                    raise NotBound(f"entry {eid} is not bound to host {host}")
                entries.append(table.entries[eid])
            for e in entries:
                ev = HotPlugEvent(False, host, e.gpu_box_id, e.slot_id, e.path_id)
                self.box_tables[e.gpu_box_id].free(e.slot_id)
                table.free(e.entry_id)
                self.events.append(ev)

    def grants_of(self, host: int) -> list[Grant]:
        with self._lock:
            return [
                Grant(e.gpu_box_id, e.slot_id, e.path_id, e.entry_id)
                for e in self._host_table(host).used_entries()
            ]


def provision(manager: PoolManager, request: AllocationRequest) -> list[Grant]:
    return manager.provision(request)


def reclaim(manager: PoolManager, host: int, entry_ids: Iterable[int]) -> None:
    manager.reclaim(host, entry_ids)


def snapshot(manager: PoolManager) -> PoolState:
    return manager.snapshot()
