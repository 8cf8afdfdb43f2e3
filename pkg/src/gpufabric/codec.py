"""Proxy data plane: TLP <-> fabric packet conversion and routing.

Wire layout (big endian)::

    Header: [class:1][src_node:2][src_slot:1][dst_node:2][dst_slot:1][path_id:1]
            [seq:2][tlp_header:16][tlp_crc:4][net_crc:4]                 34 bytes
    Data:   [class:1][src_node:2][src_slot:1][dst_node:2][dst_slot:1][path_id:1]
            [seq:2][chunk_len:2][chunk][net_crc:4]            16 bytes + chunk

``seq`` numbers packets within one TLP's group (header is 0).  ``tlp_crc``
covers the 16-byte TLP header followed by the full payload; ``net_crc``
covers every preceding byte of its own packet.  Both use CRC-32.

The 16-byte TLP header block::

    [kind:1][msg_routing:1][tag:2][length:2][flags:1][rsvd:1][target:8]

``length`` is the payload length, or the requested length for reads.
``target`` holds the 64-bit address, or ``[bus:1][dev:1][register:2][0:4]``
for ID-routed TLPs.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

from .errors import (
    CodecError,
    CrcMismatch,
    IncompleteGroup,
    MalformedTlp,
    MtuTooSmall,
    NotBound,
    ReorderedGroup,
)
from .tables import BoxTable, HostTable, Target
from .tlp import NO_TAG, MessageRouting, RoutingClass, Tlp, TlpKind, classify

HEADER, DATA = 0, 1

_ROUTE = ">BHBHBBH"  # class, src_node, src_slot, dst_node, dst_slot, path_id, seq
_ROUTE_LEN = struct.calcsize(_ROUTE)
_TLP_HDR = ">BBHHBBQ"
TLP_HEADER_LEN = struct.calcsize(_TLP_HDR)
HEADER_PACKET_LEN = _ROUTE_LEN + TLP_HEADER_LEN + 4 + 4
DATA_OVERHEAD = _ROUTE_LEN + 2 + 4
MIN_DATA_CHUNK = 64
_READ_CODES = {int(TlpKind.MEM_READ), int(TlpKind.IO_READ), int(TlpKind.CONFIG_READ)}
DEFAULT_MTU = 256

_F_ADDR, _F_ID, _F_REG = 0x1, 0x2, 0x4


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


class RouteInfo(NamedTuple):
    dst_node: int
    dst_slot: int
    path_id: int


class Delivery(enum.Enum):
    LOCAL = "local"
    NO_ROUTE = "no-route"


LOCAL_DELIVERY = Delivery.LOCAL
NO_ROUTE = Delivery.NO_ROUTE


@dataclass(frozen=True)
class FabricPacket:
    packet_class: int
    src_node: int
    src_slot: int
    dst_node: int
    dst_slot: int
    path_id: int
    seq: int
    tlp_header: bytes = b""
    tlp_crc: int = 0
    payload: bytes = b""
    net_crc: int = 0

    def body(self) -> bytes:
        route = struct.pack(
            _ROUTE, self.packet_class, self.src_node, self.src_slot,
            self.dst_node, self.dst_slot, self.path_id, self.seq,
        )
        if self.packet_class == HEADER:
            return route + self.tlp_header + struct.pack(">I", self.tlp_crc)
        return route + struct.pack(">H", len(self.payload)) + self.payload

    def pack(self) -> bytes:
        return self.body() + struct.pack(">I", self.net_crc)

    def sealed(self) -> "FabricPacket":
        """Copy with ``net_crc`` computed over the body."""
        return _replace_crc(self, crc32(self.body()))

    @property
    def crc_ok(self) -> bool:
        return crc32(self.body()) == self.net_crc

    @classmethod
    def unpack(cls, raw: bytes) -> "FabricPacket":
        """Parse wire bytes; the trailing CRC is checked before anything else."""
        raw = bytes(raw)
        if len(raw) < _ROUTE_LEN + 4:
            raise IncompleteGroup(f"truncated packet ({len(raw)} bytes)")
        (net_crc,) = struct.unpack_from(">I", raw, len(raw) - 4)
        if crc32(raw[:-4]) != net_crc:
            raise CrcMismatch("network CRC mismatch")
        cls_, sn, ss, dn, ds, path, seq = struct.unpack_from(_ROUTE, raw)
        rest = raw[_ROUTE_LEN:-4]
        if cls_ == HEADER:
            if len(rest) != TLP_HEADER_LEN + 4:
                raise CodecError("header packet has wrong length")
            (tlp_crc,) = struct.unpack_from(">I", rest, TLP_HEADER_LEN)
            return cls(cls_, sn, ss, dn, ds, path, seq, rest[:TLP_HEADER_LEN], tlp_crc, b"", net_crc)
        if cls_ == DATA:
            (n,) = struct.unpack_from(">H", rest)
            if len(rest) != 2 + n:
                raise CodecError("data packet length field disagrees with size")
            return cls(cls_, sn, ss, dn, ds, path, seq, b"", 0, rest[2:], net_crc)
        raise CodecError(f"unknown packet class {cls_}")


def _replace_crc(p: FabricPacket, crc: int) -> FabricPacket:
    return FabricPacket(
        p.packet_class, p.src_node, p.src_slot, p.dst_node, p.dst_slot,
        p.path_id, p.seq, p.tlp_header, p.tlp_crc, p.payload, crc,
    )


def encode_tlp_header(tlp: Tlp) -> bytes:
    flags = 0
    if tlp.address is not None:
        flags |= _F_ADDR
        target = tlp.address
    else:
        target = 0
        if tlp.bus_id is not None:
            flags |= _F_ID
            reg = 0
            if tlp.register is not None:
                flags |= _F_REG
                reg = tlp.register
            target = (tlp.bus_id << 56) | (tlp.device_id << 48) | (reg << 32)
    length = tlp.read_len if tlp.read_len else tlp.payload_len
    return struct.pack(
        _TLP_HDR,
        int(tlp.kind),
        int(tlp.message_routing) if tlp.message_routing is not None else 0,
        tlp.tag if tlp.tag is not None else NO_TAG,
        length,
        flags,
        0,
        target,
    )


def decode_tlp_header(block: bytes, payload: bytes = b"") -> Tlp:
    kind, routing, tag, length, flags, _, target = struct.unpack(_TLP_HDR, block)
    kw = {}
    try:
        kind = TlpKind(kind)
        kw["message_routing"] = MessageRouting(routing) if routing else None
    except ValueError as exc:
        raise MalformedTlp(str(exc)) from None
    if flags & _F_ADDR:
        kw["address"] = target
    elif flags & _F_ID:
        kw["bus_id"] = (target >> 56) & 0xFF
        kw["device_id"] = (target >> 48) & 0xFF
        if flags & _F_REG:
            kw["register"] = (target >> 32) & 0xFFFF
    kw["tag"] = None if tag == NO_TAG else tag
    if kind in (TlpKind.MEM_READ, TlpKind.IO_READ, TlpKind.CONFIG_READ):
        kw["read_len"] = length
    elif length != len(payload):
        raise IncompleteGroup(f"TLP header announces {length} payload bytes, got {len(payload)}")
    return Tlp(kind, payload=payload, **kw)


def data_capacity(mtu: int) -> int:
    return mtu - DATA_OVERHEAD


def encapsulate(
    tlp: Tlp,
    src: tuple[int, int],
    route: RouteInfo,
    mtu: int = DEFAULT_MTU,
) -> list[FabricPacket]:
    """Split one TLP into a header packet plus zero or more data packets."""
    cap = data_capacity(mtu)
    if cap < MIN_DATA_CHUNK or mtu < HEADER_PACKET_LEN:
        raise MtuTooSmall(f"MTU {mtu} leaves {cap} data bytes per packet (need {MIN_DATA_CHUNK})")
    src_node, src_slot = src
    hdr = encode_tlp_header(tlp)
    common = (src_node, src_slot, route.dst_node, route.dst_slot, route.path_id)
    packets = [
        FabricPacket(HEADER, *common, 0, hdr, crc32(hdr + tlp.payload)).sealed()
    ]
    payload = tlp.payload
    for i, off in enumerate(range(0, len(payload), cap), start=1):
        packets.append(FabricPacket(DATA, *common, i, payload=payload[off:off + cap]).sealed())
    return packets


PacketLike = Union[FabricPacket, bytes, bytearray]


def decapsulate(packets: Sequence[PacketLike]) -> Tlp:
    """Reassemble the TLP carried by one encapsulation group.

    Accepts parsed packets or raw wire bytes.  Integrity is checked per
    packet first, then sequence, then the end-to-end TLP CRC.
    """
    parsed = []
    for p in packets:
        if isinstance(p, FabricPacket):
            if not p.crc_ok:
                raise CrcMismatch("network CRC mismatch")
            parsed.append(p)
        else:
            parsed.append(FabricPacket.unpack(p))
    if not parsed:
        raise IncompleteGroup("empty packet group")

    seqs = [p.seq for p in parsed]
    if seqs != sorted(seqs):
        raise ReorderedGroup(f"packets out of order: seq {seqs}")
    if seqs != list(range(len(parsed))):
        raise IncompleteGroup(f"missing packets in group: seq {seqs}")
    head, data = parsed[0], parsed[1:]
    if head.packet_class != HEADER or any(p.packet_class != DATA for p in data):
        raise CodecError("group must be one header packet followed by data packets")
    route = (head.src_node, head.src_slot, head.dst_node, head.dst_slot, head.path_id)
    for p in data:
        if (p.src_node, p.src_slot, p.dst_node, p.dst_slot, p.path_id) != route:
            raise CodecError("data packet route differs from its header")

    payload = b"".join(p.payload for p in data)
    kind, _, _, length = struct.unpack_from(">BBHH", head.tlp_header)
    expected = 0 if kind in _READ_CODES else length
    if len(payload) < expected:
        raise IncompleteGroup(f"expected {expected} payload bytes, got {len(payload)}")
    if len(payload) > expected:
        raise CodecError(f"expected {expected} payload bytes, got {len(payload)}")
    if crc32(head.tlp_header + payload) != head.tlp_crc:
        raise CrcMismatch("TLP CRC mismatch")
    return decode_tlp_header(head.tlp_header, payload)


def wire_bytes(packets: Sequence[FabricPacket]) -> list[bytes]:
    return [p.pack() for p in packets]


# --- routing ------------------------------------------------------------

RouteResult = Union[RouteInfo, Delivery]


def _as_route(target: Optional[Target]) -> RouteResult:
    if target is None:
        return NO_ROUTE
    return RouteInfo(target.gpu_box_id, target.slot_id, target.path_id)


def route_host_to_box(tlp: Tlp, host_table: HostTable) -> RouteResult:
    """Resolve where a TLP arriving from the host must go."""
    rc = classify(tlp)
    if rc is RoutingClass.ADDRESS:
        return _as_route(host_table.lookup_by_address(tlp.address))
    if rc is RoutingClass.ID:
        return _as_route(host_table.lookup_by_id(tlp.bus_id, tlp.device_id))
    return LOCAL_DELIVERY


def route_box_to_host(tlp: Tlp, box_table: BoxTable, slot_id: int) -> RouteInfo:
    """A bound GPU talks only to its host, whatever the TLP says."""
    e = box_table.slot(slot_id)
    if not e.used:
        raise NotBound(f"slot {slot_id} is not bound to a host")
    return RouteInfo(e.host_node_id, 0, e.path_id)


# Config-space offsets snooped by the host proxy.  A 64-bit little-endian
# value is written to each; the window is committed once both are seen.
MEM_BASE_REG = 0x20
MEM_LIMIT_REG = 0x28


class HostProxy:
    """Host-side proxy: snoops window programming, routes and encapsulates."""

    def __init__(self, node_id: int, table: HostTable, mtu: int = DEFAULT_MTU):
        self.node_id = node_id
        self.table = table
        self.mtu = mtu
        self._pending: dict[int, dict[str, int]] = {}

    def snoop(self, tlp: Tlp) -> None:
        if tlp.kind is not TlpKind.CONFIG_WRITE or tlp.register not in (MEM_BASE_REG, MEM_LIMIT_REG):
            return
        e = self.table.entry_for_id(tlp.bus_id, tlp.device_id)
        if e is None:
            return
        value = int.from_bytes(tlp.payload[:8].ljust(8, b"\0"), "little")
        pend = self._pending.setdefault(e.entry_id, {})
        pend["base" if tlp.register == MEM_BASE_REG else "limit"] = value
        if len(pend) == 2:
            del self._pending[e.entry_id]
            self.table.set_window(e.entry_id, pend["base"], pend["limit"])

    def forward(self, tlp: Tlp) -> Union[list[FabricPacket], Delivery]:
        self.snoop(tlp)
        route = route_host_to_box(tlp, self.table)
        if isinstance(route, Delivery):
            return route
        return encapsulate(tlp, (self.node_id, 0), route, self.mtu)


class BoxProxy:
    def __init__(self, node_id: int, table: BoxTable, mtu: int = DEFAULT_MTU):
        self.node_id = node_id
        self.table = table
        self.mtu = mtu

    def forward(self, tlp: Tlp, slot_id: int) -> list[FabricPacket]:
        route = route_box_to_host(tlp, self.table, slot_id)
        return encapsulate(tlp, (self.node_id, slot_id), route, self.mtu)
