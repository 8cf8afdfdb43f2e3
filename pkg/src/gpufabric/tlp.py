"""PCIe transaction-layer packets, routing classes and the tag namespace."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Optional

from .errors import MalformedTlp, UnknownTag

DEFAULT_TAGS = 140
DEFAULT_MRS = 128
# PCIe architectural ceiling on payload / read request size.
MAX_TLP_BYTES = 4096
NO_TAG = 0xFFFF


class TlpKind(enum.IntEnum):
    MEM_READ = 1
    MEM_WRITE = 2
    IO_READ = 3
    IO_WRITE = 4
    CONFIG_READ = 5
    CONFIG_WRITE = 6
    MESSAGE = 7
    COMPLETION = 8


class MessageRouting(enum.IntEnum):
    ADDRESS = 1
    ID = 2
    LOCAL = 3


class RoutingClass(enum.Enum):
    ADDRESS = "address"
    ID = "id"
    IMPLICIT = "implicit"
    LOCAL = "local"


NON_POSTED = frozenset({
    TlpKind.MEM_READ, TlpKind.IO_READ, TlpKind.IO_WRITE,
    TlpKind.CONFIG_READ, TlpKind.CONFIG_WRITE,
})
READS = frozenset({TlpKind.MEM_READ, TlpKind.IO_READ, TlpKind.CONFIG_READ})
ADDRESS_KINDS = frozenset({TlpKind.MEM_READ, TlpKind.MEM_WRITE, TlpKind.IO_READ, TlpKind.IO_WRITE})
CONFIG_KINDS = frozenset({TlpKind.CONFIG_READ, TlpKind.CONFIG_WRITE})
WRITES_WITH_DATA = frozenset({TlpKind.MEM_WRITE, TlpKind.IO_WRITE, TlpKind.CONFIG_WRITE})


@dataclass(frozen=True)
class Tlp:
    """A single transaction-layer packet.

    Field presence depends on ``kind`` and is checked at construction, so a
    ``Tlp`` that exists is well formed.  Config TLPs carry the target
    ``register`` offset; completions carry the requester's ``bus_id`` /
    ``device_id`` plus the tag of the request they answer.  ``read_len`` is
    the requested byte count of a read request (zero for everything else).
    """

    kind: TlpKind
    address: Optional[int] = None
    bus_id: Optional[int] = None
    device_id: Optional[int] = None
    register: Optional[int] = None
    message_routing: Optional[MessageRouting] = None
    tag: Optional[int] = None
    read_len: int = 0
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "kind", TlpKind(self.kind))
        if self.message_routing is not None:
            object.__setattr__(self, "message_routing", MessageRouting(self.message_routing))
        object.__setattr__(self, "payload", bytes(self.payload))
        _validate(self)

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def is_non_posted(self) -> bool:
        return self.kind in NON_POSTED

    @property
    def has_address(self) -> bool:
        return self.address is not None

    @property
    def has_id(self) -> bool:
        return self.bus_id is not None


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise MalformedTlp(msg)


def _validate(t: Tlp) -> None:
    kind = t.kind
    _require(len(t.payload) <= MAX_TLP_BYTES, f"payload of {len(t.payload)} bytes exceeds {MAX_TLP_BYTES}")
    _require(0 <= t.read_len <= MAX_TLP_BYTES, "read_len out of range")

    if t.address is not None:
        _require(0 <= t.address < 1 << 64, "address must fit in 64 bits")
    if t.bus_id is not None or t.device_id is not None:
        _require(t.bus_id is not None and t.device_id is not None, "bus_id and device_id come as a pair")
        _require(0 <= t.bus_id <= 0xFF, "bus_id must fit in 8 bits")
        _require(0 <= t.device_id <= 0x1F, "device_id must fit in 5 bits")
    if t.register is not None:
        _require(0 <= t.register <= 0xFFF, "config register offset must fit in 12 bits")

    wants_tag = kind in NON_POSTED or kind is TlpKind.COMPLETION
    if wants_tag:
        _require(t.tag is not None and 0 <= t.tag < NO_TAG, f"{kind.name} requires a tag")
    else:
        _require(t.tag is None, f"{kind.name} must not carry a tag")

    if kind in READS:
        _require(not t.payload, "read requests carry no payload")
        _require(t.read_len > 0, "read requests need read_len > 0")
    else:
        _require(t.read_len == 0, f"{kind.name} has no read_len")

    if kind in ADDRESS_KINDS:
        _require(t.address is not None, f"{kind.name} requires an address")
        _require(t.bus_id is None and t.register is None, f"{kind.name} is address routed")
    elif kind in CONFIG_KINDS:
        _require(t.bus_id is not None, f"{kind.name} requires bus_id/device_id")
        _require(t.register is not None, f"{kind.name} requires a register offset")
        _require(t.address is None, f"{kind.name} is ID routed")
    elif kind is TlpKind.COMPLETION:
        _require(t.bus_id is not None, "completion requires the requester bus_id/device_id")
        _require(t.address is None and t.register is None, "completion is ID routed")
    elif kind is TlpKind.MESSAGE:
        _require(t.message_routing is not None, "message requires a routing value")
        _require(t.register is None, "message has no register")
        r = t.message_routing
        if r is MessageRouting.ADDRESS:
            _require(t.address is not None and t.bus_id is None, "address-routed message needs only an address")
        elif r is MessageRouting.ID:
            _require(t.bus_id is not None and t.address is None, "ID-routed message needs only bus/device")
        else:
            _require(t.address is None and t.bus_id is None, "local message has no target")

    if kind is not TlpKind.MESSAGE:
        _require(t.message_routing is None, "message_routing only applies to messages")
    if kind in WRITES_WITH_DATA:
        _require(len(t.payload) > 0 or kind is TlpKind.MEM_WRITE, f"{kind.name} needs data")


def check_size(tlp: Tlp, mrs: int) -> None:
    """Reject a TLP whose data or read request exceeds ``mrs`` bytes."""
    if tlp.payload_len > mrs or tlp.read_len > mrs:
        raise MalformedTlp(f"{tlp.kind.name} exceeds MRS={mrs}")


def routing_kind(tlp: Tlp) -> RoutingClass:
    """Routing mechanism named by the TLP type, before resolving messages."""
    if tlp.kind in ADDRESS_KINDS:
        return RoutingClass.ADDRESS
    if tlp.kind is TlpKind.MESSAGE:
        return RoutingClass.IMPLICIT
    return RoutingClass.ID


_MESSAGE_CLASS = {
    MessageRouting.ADDRESS: RoutingClass.ADDRESS,
    MessageRouting.ID: RoutingClass.ID,
    MessageRouting.LOCAL: RoutingClass.LOCAL,
}


def classify(tlp: Tlp) -> RoutingClass:
    """Resolve a TLP to ADDRESS, ID or LOCAL routing.

    Messages are implicitly routed; their routing field decides the class.
    Completions are ID routed back to the requester.
    """
    rk = routing_kind(tlp)
    if rk is RoutingClass.IMPLICIT:
        return _MESSAGE_CLASS[tlp.message_routing]
    return rk


@dataclass(frozen=True)
class LinkParams:
    mrs: int = DEFAULT_MRS
    lane_rate: float = 781.25e6  # bytes/s; 16 lanes -> 12.5 GB/s
    lanes: int = 16
    mps: int = 256  # max payload per posted write

    def __post_init__(self):
        if self.mrs <= 0 or self.mps <= 0:
            raise ValueError("mrs and mps must be positive")
        if self.lanes not in (1, 2, 4, 8, 16):
            raise ValueError(f"lanes must be one of 1, 2, 4, 8, 16 (got {self.lanes})")
        if self.lane_rate <= 0:
            raise ValueError("lane_rate must be positive")

    @property
    def rate(self) -> float:
        return self.lane_rate * self.lanes


class TagPool:
    """Finite namespace of tags for outstanding non-posted requests.

    Tags are handed out lowest-free-first.
    """

    def __init__(self, capacity: int = DEFAULT_TAGS):
        if capacity <= 0:
            raise ValueError("tag capacity must be positive")
        self.capacity = capacity
        self.in_flight: set[int] = set()
        self._free = list(range(capacity))

    def __len__(self) -> int:
        return len(self.in_flight)

    @property
    def full(self) -> bool:
        return len(self.in_flight) >= self.capacity

    def acquire(self) -> Optional[int]:
        """Allocate a tag, or return ``None`` when every tag is in flight."""
        if not self._free:
            return None
        tag = heapq.heappop(self._free)
        self.in_flight.add(tag)
        return tag

    def release(self, tag: int) -> None:
        if tag not in self.in_flight:
            raise UnknownTag(f"tag {tag} is not in flight")
        self.in_flight.remove(tag)
        heapq.heappush(self._free, tag)


def acquire_tag(pool: TagPool) -> Optional[int]:
    return pool.acquire()


def release_tag(pool: TagPool, tag: int) -> None:
    pool.release(tag)
